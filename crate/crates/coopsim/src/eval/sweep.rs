use crate::baseline::TrackerConfig;
use crate::pipeline::{ModelConfig, ModelWeights};
use crate::system::{prepare_scenarios, PreparedScenario};
use crate::world::{generate_scenario, ScenarioConfig, SensorConfig};

use super::{evaluate_method, EvalError, Method, NoiseConfig};

/// One evaluation cell's result.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub method: String,
    pub p: f64,
    pub iou: f64,
    pub ap: f64,
    pub seed: u64,
    pub scenario_count: usize,
    pub sigma_t: f64,
    pub sigma_r: f64,
}

/// Shared inputs for sweep drivers.
pub struct SweepContext<'a> {
    pub prepared: &'a [PreparedScenario],
    pub sensor: &'a SensorConfig,
    pub model_cfg: &'a ModelConfig,
    pub tracker_cfg: &'a TrackerConfig,
}

/// Worker count for sweep cells: `COOPSIM_THREADS` when set, otherwise the
/// machine's available parallelism.
pub fn sweep_threads() -> usize {
    if let Ok(v) = std::env::var("COOPSIM_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn push_records(
    out: &mut Vec<EvalRecord>,
    method: &str,
    p: f64,
    seed: u64,
    count: usize,
    noise: Option<&NoiseConfig>,
    pair: super::ApPair,
) {
    let (st, sr) = noise.map_or((0.0, 0.0), |n| (n.sigma_t, n.sigma_r));
    for (iou, ap) in [(0.5, pair.ap50), (0.7, pair.ap70)] {
        out.push(EvalRecord {
            method: method.to_string(),
            p,
            iou,
            ap,
            seed,
            scenario_count: count,
            sigma_t: st,
            sigma_r: sr,
        });
    }
}

/// AP over a grid of packet drop rates, for every evaluation seed. Records
/// come out in deterministic (p, seed, iou) order.
pub fn run_pdr_sweep(
    ctx: &SweepContext<'_>,
    method: Method,
    weights: &ModelWeights,
    p_list: &[f64],
    eval_seeds: &[u64],
) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::with_capacity(p_list.len() * eval_seeds.len() * 2);
    for &p in p_list {
        for &seed in eval_seeds {
            let pair = evaluate_method(
                ctx.prepared,
                ctx.sensor,
                ctx.model_cfg,
                ctx.tracker_cfg,
                method,
                weights,
                p,
                seed,
                None,
            )?;
            push_records(&mut out, method.name(), p, seed, ctx.prepared.len(), None, pair);
        }
    }
    Ok(out)
}

/// AP across pose-noise levels at a fixed drop rate (the noise sweep
/// default is p = 0.5). Noise perturbs only the poses used for warping and
/// box transformation, never the ground truth.
pub fn run_pose_noise_sweep(
    ctx: &SweepContext<'_>,
    method: Method,
    weights: &ModelWeights,
    levels: &[(f64, f64)],
    p: f64,
    eval_seeds: &[u64],
) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::new();
    for &(sigma_t, sigma_r) in levels {
        for &seed in eval_seeds {
            let noise = NoiseConfig { sigma_t, sigma_r, seed };
            let pair = evaluate_method(
                ctx.prepared,
                ctx.sensor,
                ctx.model_cfg,
                ctx.tracker_cfg,
                method,
                weights,
                p,
                seed,
                Some(&noise),
            )?;
            push_records(&mut out, method.name(), p, seed, ctx.prepared.len(), Some(&noise), pair);
        }
    }
    Ok(out)
}

/// History-length ablation: evaluate per-k trained models with the matching
/// history window. Method labels are `incop_k{k}`.
pub fn run_history_k_ablation(
    ctx: &SweepContext<'_>,
    models: &[(usize, &ModelWeights)],
    p_list: &[f64],
    eval_seeds: &[u64],
) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::new();
    for &(k, weights) in models {
        let cfg = ModelConfig { history_k: k, ..*ctx.model_cfg };
        let label = format!("incop_k{k}");
        for &p in p_list {
            for &seed in eval_seeds {
                let pair = evaluate_method(
                    ctx.prepared,
                    ctx.sensor,
                    &cfg,
                    ctx.tracker_cfg,
                    Method::Incop,
                    weights,
                    p,
                    seed,
                    None,
                )?;
                push_records(&mut out, &label, p, seed, ctx.prepared.len(), None, pair);
            }
        }
    }
    Ok(out)
}

/// Component ablation: one labelled (method, weights) pair per trained
/// variant, evaluated over the drop-rate grid.
pub fn run_components_ablation(
    ctx: &SweepContext<'_>,
    variants: &[(String, Method, &ModelWeights)],
    p_list: &[f64],
    eval_seeds: &[u64],
) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::new();
    for (label, method, weights) in variants {
        for &p in p_list {
            for &seed in eval_seeds {
                let pair = evaluate_method(
                    ctx.prepared,
                    ctx.sensor,
                    ctx.model_cfg,
                    ctx.tracker_cfg,
                    *method,
                    weights,
                    p,
                    seed,
                    None,
                )?;
                push_records(&mut out, label, p, seed, ctx.prepared.len(), None, pair);
            }
        }
    }
    Ok(out)
}

/// Cooperation-node-count ablation: regenerate the scenario set at each node
/// count (same seeds, same world otherwise) and evaluate the given model.
/// Labels are `incop_n{count}`.
#[allow(clippy::too_many_arguments)]
pub fn run_num_nodes_ablation(
    base_world: &ScenarioConfig,
    sensor: &SensorConfig,
    model_cfg: &ModelConfig,
    tracker_cfg: &TrackerConfig,
    weights: &ModelWeights,
    node_counts: &[usize],
    scenario_seeds: &[u64],
    p_list: &[f64],
    eval_seeds: &[u64],
) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::new();
    for &count in node_counts {
        if count < 2 {
            return Err(EvalError::InvalidConfig(format!(
                "node-count ablation needs at least 2 nodes, got {count}"
            )));
        }
        let world = ScenarioConfig {
            n_vehicles: count - base_world.n_rsu.min(count - 1),
            n_rsu: base_world.n_rsu.min(count - 1),
            ..*base_world
        };
        let scenarios: Vec<_> = scenario_seeds
            .iter()
            .map(|&s| generate_scenario(&world, s))
            .collect::<Result<_, _>>()
            .map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
        let prepared = prepare_scenarios(&scenarios, sensor)?;
        let ctx = SweepContext { prepared: &prepared, sensor, model_cfg, tracker_cfg };
        let label = format!("incop_n{count}");
        for &p in p_list {
            for &seed in eval_seeds {
                let pair = evaluate_method(
                    ctx.prepared,
                    ctx.sensor,
                    ctx.model_cfg,
                    ctx.tracker_cfg,
                    Method::Incop,
                    weights,
                    p,
                    seed,
                    None,
                )?;
                push_records(&mut out, &label, p, seed, prepared.len(), None, pair);
            }
        }
    }
    Ok(out)
}

/// Mean AP over the drop-rate grid for one method at one IoU threshold (the
/// summary tables' "Avg." column).
pub fn mean_ap_over_p(records: &[EvalRecord], method: &str, iou: f64) -> Option<f64> {
    let vals: Vec<f64> = records
        .iter()
        .filter(|r| r.method == method && (r.iou - iou).abs() < 1e-9)
        .map(|r| r.ap)
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::generate_scenario;

    fn setup() -> (Vec<PreparedScenario>, SensorConfig, ModelConfig, ModelWeights) {
        let world = ScenarioConfig {
            n_vehicles: 2,
            n_rsu: 1,
            n_objects: 4,
            map_half_extent: 9.0,
            frames: 3,
            dt: 0.2,
            object_speed_max: 4.0,
            agent_speed_max: 3.0,
            yaw_rate_max: 0.1,
        };
        let sensor = SensorConfig { window_m: 9.6, cell_m: 0.6, max_range: 6.0 };
        let scenarios: Vec<_> = (0..2).map(|s| generate_scenario(&world, 60 + s).unwrap()).collect();
        let prepared = prepare_scenarios(&scenarios, &sensor).unwrap();
        let cfg = ModelConfig { channels: 4, history_k: 2, conf_thresh: 0.3, nms_iou: 0.15 };
        let weights = ModelWeights::init(2, &cfg, true).unwrap();
        (prepared, sensor, cfg, weights)
    }

    #[test]
    fn sweep_produces_one_record_per_cell_per_iou() {
        let (prepared, sensor, cfg, weights) = setup();
        let tracker = TrackerConfig::default();
        let ctx = SweepContext {
            prepared: &prepared,
            sensor: &sensor,
            model_cfg: &cfg,
            tracker_cfg: &tracker,
        };
        let records =
            run_pdr_sweep(&ctx, Method::NoHistory, &weights, &[0.0, 0.5], &[1, 2]).unwrap();
        assert_eq!(records.len(), 2 * 2 * 2);
        // Reproducible.
        let again = run_pdr_sweep(&ctx, Method::NoHistory, &weights, &[0.0, 0.5], &[1, 2]).unwrap();
        assert_eq!(records, again);
    }

    #[test]
    fn history_k_ablation_emits_grid_records() {
        let (prepared, sensor, cfg, weights) = setup();
        let tracker = TrackerConfig::default();
        let ctx = SweepContext {
            prepared: &prepared,
            sensor: &sensor,
            model_cfg: &cfg,
            tracker_cfg: &tracker,
        };
        let records =
            run_history_k_ablation(&ctx, &[(1, &weights), (2, &weights)], &[0.0, 0.9], &[4])
                .unwrap();
        // 2 models x 2 p x 1 seed x 2 iou.
        assert_eq!(records.len(), 8);
        assert!(records.iter().any(|r| r.method == "incop_k1"));
        assert!(records.iter().any(|r| r.method == "incop_k2"));
    }

    #[test]
    fn components_ablation_uses_given_labels() {
        let (prepared, sensor, cfg, weights) = setup();
        let tracker = TrackerConfig::default();
        let ctx = SweepContext {
            prepared: &prepared,
            sensor: &sensor,
            model_cfg: &cfg,
            tracker_cfg: &tracker,
        };
        let records =
            run_components_ablation(&ctx, &[("temporal_summation".into(), Method::TemporalSummation, &weights)], &[0.5], &[1])
                .unwrap();
        assert_eq!(records.len(), 2);
    }

    #[test]
    fn num_nodes_ablation_covers_counts() {
        let (_, sensor, cfg, weights) = setup();
        let world = ScenarioConfig {
            n_vehicles: 2,
            n_rsu: 1,
            n_objects: 4,
            map_half_extent: 9.0,
            frames: 2,
            dt: 0.2,
            object_speed_max: 4.0,
            agent_speed_max: 3.0,
            yaw_rate_max: 0.1,
        };
        let records = run_num_nodes_ablation(
            &world,
            &sensor,
            &cfg,
            &TrackerConfig::default(),
            &weights,
            &[2, 3],
            &[70],
            &[0.5],
            &[1],
        )
        .unwrap();
        assert_eq!(records.len(), 2 * 2);
        assert!(records.iter().any(|r| r.method == "incop_n2"));
        assert!(records.iter().any(|r| r.method == "incop_n3"));
    }
}
