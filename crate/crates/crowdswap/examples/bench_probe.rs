use crowdswap::sim::{run, Scenario};
use crowdswap::{LearnerConfig, Strategy};

fn env_f(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "ship-not".into());
    let seed = env_f("SEED", 1.0) as u64;
    let scen = env_f("SCEN", 1.0) as u8;
    let mut sc = match which.as_str() {
        "ship-not" => Scenario::crowdshipping_default(seed),
        "ship-collab" => {
            let mut sc = Scenario::crowdshipping_default(seed);
            sc.strategy = Strategy::Collaborative;
            sc
        }
        "sense-not" => Scenario::crowdsensing(scen, seed),
        "sense-random" => {
            let mut sc = Scenario::crowdsensing(scen, seed);
            sc.strategy = Strategy::Random;
            sc
        }
        "sense-forced" => {
            let mut sc = Scenario::crowdsensing(scen, seed);
            sc.strategy = Strategy::Forced;
            sc
        }
        "sense-att" => {
            let mut sc = Scenario::crowdsensing(scen, seed);
            sc.strategy = Strategy::Att;
            sc
        }
        other => panic!("unknown probe {other}"),
    };
    // Overrides for calibration sweeps.
    if let Ok(n) = std::env::var("WORKERS") {
        if let crowdswap::sim::TraceSource::Synthetic { n_workers, .. } = &mut sc.traces {
            *n_workers = n.parse().unwrap();
        }
    }
    sc.reward_eur = env_f("REWARD", sc.reward_eur);
    sc.penalty_eur = env_f("PENALTY", sc.penalty_eur);
    sc.costs.fixed_eur_per_task = env_f("FIXED", sc.costs.fixed_eur_per_task);
    sc.area.radius_m = env_f("RADIUS", sc.area.radius_m);
    sc.deadline_s = env_f("DEADLINE", sc.deadline_s);
    sc.incident_probability = env_f("INC", sc.incident_probability);
    sc.monitor_period_s = env_f("MONITOR", sc.monitor_period_s);
    sc.cell_size_m = env_f("CELL", sc.cell_size_m);
    sc.traffic_period_s = env_f("TRAFFIC", sc.traffic_period_s);
    if let Ok(m) = std::env::var("MODE") {
        if let crowdswap::sim::TraceSource::Synthetic { mode_mix, .. } = &mut sc.traces {
            *mode_mix = match m.as_str() {
                "moto" => crowdswap::ModeMix { walk: 0.0, bike: 0.0, motorbike: 1.0 },
                spec => {
                    let p: Vec<f64> = spec.split(',').map(|v| v.parse().unwrap()).collect();
                    crowdswap::ModeMix { walk: p[0], bike: p[1], motorbike: p[2] }
                }
            };
        }
    }
    if let crowdswap::sim::TraceSource::Synthetic { trip_min_s, trip_max_s, .. } = &mut sc.traces {
        *trip_min_s = env_f("TRIPMIN", *trip_min_s);
        *trip_max_s = env_f("TRIPMAX", *trip_max_s);
    }
    match std::env::var("LEARNER").as_deref() {
        Ok("ht") => sc.learner = LearnerConfig::hoeffding(),
        Ok("knn") => sc.learner = LearnerConfig::knn(),
        _ => {}
    }

    let t0 = std::time::Instant::now();
    let r = run(&sc).unwrap();
    let dt = t0.elapsed();
    let f1_2000 = r
        .f1_history
        .iter()
        .find(|(n, _)| *n >= 2000)
        .map_or(f64::NAN, |(_, f)| *f);
    println!(
        "{which} seed={seed}: {:.2?} delay={:.3} compl={:.0}s xfer={} reass={} ok/late={}/{} auc={} \
         items={} f1={:.3} f1@2k={:.3} inc={} part={} profit={:.2}",
        dt,
        r.delay_rate,
        r.mean_completion_s,
        r.n_transfers,
        r.n_reassigned_tasks,
        r.in_time_after_transfer,
        r.delayed_after_transfer,
        r.n_auctions,
        r.n_items,
        r.f1,
        f1_2000,
        r.n_incidents,
        r.worker_profits.len(),
        if r.worker_profits.is_empty() {
            0.0
        } else {
            r.worker_profits.iter().map(|(_, p)| p).sum::<f64>() / r.worker_profits.len() as f64
        },
    );
    if let Some(cat) = &r.importance_by_category {
        let mut top: Vec<_> = r.feature_importance.clone();
        top.sort_by(|a, b| b.1.total_cmp(&a.1));
        let names: Vec<String> =
            top.iter().take(3).map(|(n, w)| format!("{n}={w:.2}")).collect();
        println!(
            "  cap={:.3} parcel={:.3} env={:.3} top: {}",
            cat.capability,
            cat.parcel_state,
            cat.environment,
            names.join(" ")
        );
    }
    if std::env::var_os("PHASE").is_some() {
        use crowdswap::sim::Event;
        use std::collections::BTreeMap;
        let mut released: BTreeMap<&str, f64> = BTreeMap::new();
        let mut assigned: BTreeMap<&str, f64> = BTreeMap::new();
        let mut healthy: Vec<f64> = Vec::new();
        for ev in &r.events {
            match ev {
                Event::TaskReleased { t_s, task_id } => {
                    released.insert(task_id, *t_s);
                }
                Event::TaskAssigned { t_s, task_id, .. } => {
                    assigned.entry(task_id).or_insert(*t_s);
                }
                Event::TaskCompleted { t_s, task_id, late, .. } if !late => {
                    healthy.push(t_s - released[task_id.as_str()]);
                }
                _ => {}
            }
        }
        let mut lags: Vec<f64> =
            assigned.iter().map(|(tid, t)| t - released[tid]).collect();
        lags.sort_by(f64::total_cmp);
        healthy.sort_by(f64::total_cmp);
        let q = |v: &[f64], p: f64| {
            if v.is_empty() { f64::NAN } else { v[((v.len() - 1) as f64 * p) as usize] }
        };
        let unassigned = released.len() - assigned.len();
        println!(
            "  assign lag p50={:.0} p90={:.0} unassigned={} | healthy compl p10={:.0} p50={:.0} p90={:.0} n={}",
            q(&lags, 0.5),
            q(&lags, 0.9),
            unassigned,
            q(&healthy, 0.1),
            q(&healthy, 0.5),
            q(&healthy, 0.9),
            healthy.len(),
        );
        // Doom decomposition for delayed tasks.
        let deadline_s: f64 = std::env::var("DEADLINE")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(1800.0);
        let mut struck: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        let mut holder: BTreeMap<&str, (&str, f64)> = BTreeMap::new();
        let mut hold_span: BTreeMap<&str, Vec<(String, f64, f64)>> = BTreeMap::new();
        let mut xferred: BTreeMap<&str, usize> = BTreeMap::new();
        let mut late_margin: Vec<f64> = Vec::new();
        let mut expired: Vec<&str> = Vec::new();
        for ev in &r.events {
            match ev {
                Event::Incident { t_s, worker_id, until_s } => {
                    struck.entry(worker_id).or_default().push((*t_s, *until_s));
                }
                Event::TaskAssigned { t_s, task_id, worker_id } => {
                    holder.insert(task_id, (worker_id, *t_s));
                }
                Event::Transfer { t_s, task_id, to_worker, .. } => {
                    *xferred.entry(task_id).or_insert(0) += 1;
                    if let Some((w, t0)) = holder.insert(task_id, (to_worker, *t_s)) {
                        hold_span.entry(task_id).or_default().push((w.to_string(), t0, *t_s));
                    }
                }
                Event::TaskCompleted { t_s, task_id, late, .. } if *late => {
                    late_margin.push(t_s - (released[task_id.as_str()] + deadline_s));
                }
                Event::TaskExpired { task_id, .. } => expired.push(task_id),
                _ => {}
            }
        }
        // A delayed task whose any holder was struck during its hold is incident-doomed.
        let mut delayed_struck = 0usize;
        let mut delayed_total = 0usize;
        for ev in &r.events {
            let (tid, end) = match ev {
                Event::TaskCompleted { t_s, task_id, late: true, .. } => (task_id, *t_s),
                Event::TaskExpired { t_s, task_id } => (task_id, *t_s),
                _ => continue,
            };
            delayed_total += 1;
            let mut spans: Vec<(String, f64, f64)> =
                hold_span.get(tid.as_str()).cloned().unwrap_or_default();
            if let Some((w, t0)) = holder.get(tid.as_str()) {
                spans.push((w.to_string(), *t0, end));
            }
            let hit = spans.iter().any(|(w, a, b)| {
                struck.get(w.as_str()).is_some_and(|ivs| {
                    ivs.iter().any(|(s, u)| s < b && u > a)
                })
            });
            if hit {
                delayed_struck += 1;
            }
        }
        late_margin.sort_by(f64::total_cmp);
        println!(
            "  delayed={} struck={} expired={} xfer'd tasks={} | late margin p25={:.0} p50={:.0} p75={:.0}",
            delayed_total,
            delayed_struck,
            expired.len(),
            xferred.len(),
            q(&late_margin, 0.25),
            q(&late_margin, 0.5),
            q(&late_margin, 0.75),
        );
    }
}
