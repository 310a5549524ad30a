use crate::numerics::{self, Tape, Tensor};

use super::{FeatureMap, MaskNetWeights, Owner, PipelineError};

/// Fusion output: the fused map plus the per-contributor spatial masks
/// (post-softmax, so they sum to 1 at every pixel).
pub struct FusionResult {
    pub fused: FeatureMap,
    pub masks: Vec<(Owner, Tensor)>,
}

/// Spatial-attentive feature fusion.
///
/// For each contributor j (the ego included), a shared mask net scores
/// `concat(F_ego, F_j)` down to one channel; a per-pixel softmax across
/// contributors turns the scores into convex weights, and the output is the
/// weighted sum of contributor features. Contributors are processed in owner
/// order, so the result is independent of the caller's list order.
pub fn fuse_spatial_attention(
    tape: &mut Tape,
    contributors: &[&FeatureMap],
    ego_index: usize,
    weights: &MaskNetWeights,
) -> Result<FusionResult, PipelineError> {
    if contributors.is_empty() {
        return Err(PipelineError::Usage("fusion requires at least one contributor".into()));
    }
    if ego_index >= contributors.len() {
        return Err(PipelineError::Usage(format!(
            "ego index {ego_index} out of range for {} contributors",
            contributors.len()
        )));
    }
    let ego = contributors[ego_index];
    let shape = ego.data.shape().to_vec();
    for c in contributors {
        if c.data.shape() != shape {
            return Err(PipelineError::Shape(format!(
                "contributor {} has shape {:?}, ego has {:?}",
                c.owner,
                c.data.shape(),
                shape
            )));
        }
        if c.pose != ego.pose {
            return Err(PipelineError::Usage(format!(
                "contributor {} not warped into the ego frame",
                c.owner
            )));
        }
    }

    // Canonical order: sort by owner for a deterministic, permutation-
    // invariant reduction.
    let mut order: Vec<usize> = (0..contributors.len()).collect();
    order.sort_by_key(|&i| contributors[i].owner);

    let mut logits = Vec::with_capacity(order.len());
    for &i in &order {
        let pair = numerics::concat0(tape, &[&ego.data, &contributors[i].data])?;
        let hidden = weights.conv1.apply(tape, &pair)?;
        let hidden = numerics::relu(tape, &hidden);
        let logit = weights.conv2.apply(tape, &hidden)?;
        logits.push(logit);
    }
    let logit_refs: Vec<&Tensor> = logits.iter().collect();
    let stacked = numerics::stack_new0(tape, &logit_refs)?; // [J,1,H,W]
    let masks = numerics::softmax(tape, &stacked, 0)?;

    let mut fused: Option<Tensor> = None;
    let mut mask_list = Vec::with_capacity(order.len());
    for (slot, &i) in order.iter().enumerate() {
        let mask = numerics::index0(tape, &masks, slot)?;
        let weighted = numerics::mul_mask(tape, &contributors[i].data, &mask)?;
        fused = Some(match fused {
            None => weighted,
            Some(acc) => numerics::add(tape, &acc, &weighted)?,
        });
        mask_list.push((contributors[i].owner, mask));
    }

    Ok(FusionResult {
        fused: FeatureMap {
            owner: ego.owner,
            timestep: ego.timestep,
            pose: ego.pose,
            extent_m: ego.extent_m,
            data: fused.expect("at least one contributor"),
        },
        masks: mask_list,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{ModelConfig, ModelWeights};
    use crate::rng::SimRng;
    use crate::world::Pose2D;

    fn feature(owner: Owner, c: usize, size: usize, data: Vec<f32>) -> FeatureMap {
        FeatureMap {
            owner,
            timestep: 0,
            pose: Pose2D::new(0.0, 0.0, 0.0),
            extent_m: size as f64,
            data: Tensor::from_vec(&[c, size, size], data).unwrap(),
        }
    }

    fn mask_weights(channels: usize, seed: u64) -> MaskNetWeights {
        let w = ModelWeights::init(seed, &ModelConfig { channels, ..Default::default() }, false)
            .unwrap();
        w.mask
    }

    #[test]
    fn single_contributor_is_identity() {
        let w = mask_weights(4, 1);
        let mut tape = Tape::inference();
        let ego = feature(Owner::Node(0), 4, 3, (0..36).map(|i| i as f32 * 0.1).collect());
        let out = fuse_spatial_attention(&mut tape, &[&ego], 0, &w).unwrap();
        assert_eq!(out.fused.data.to_vec(), ego.data.to_vec());
        assert!(out.masks[0].1.to_vec().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn equal_logits_give_elementwise_mean() {
        let w = mask_weights(4, 1);
        // Zeroed mask net emits equal logits for every contributor.
        w.conv1.weight.data_mut().fill(0.0);
        w.conv1.bias.data_mut().fill(0.0);
        w.conv2.weight.data_mut().fill(0.0);
        w.conv2.bias.data_mut().fill(0.0);
        let mut tape = Tape::inference();
        let a = feature(Owner::Node(0), 4, 2, (0..16).map(|i| i as f32).collect());
        let b = feature(Owner::Node(1), 4, 2, (0..16).map(|i| (i as f32) * 3.0).collect());
        let out = fuse_spatial_attention(&mut tape, &[&a, &b], 0, &w).unwrap();
        let got = out.fused.data.to_vec();
        for i in 0..16 {
            let expect = (i as f32 + i as f32 * 3.0) / 2.0;
            assert!((got[i] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn masks_sum_to_one_per_pixel() {
        let w = mask_weights(4, 3);
        let mut rng = SimRng::new(5);
        let mut tape = Tape::inference();
        let maps: Vec<FeatureMap> = (0..3)
            .map(|i| {
                feature(
                    Owner::Node(i),
                    4,
                    4,
                    (0..64).map(|_| rng.range_f64(-2.0, 2.0) as f32).collect(),
                )
            })
            .collect();
        let refs: Vec<&FeatureMap> = maps.iter().collect();
        let out = fuse_spatial_attention(&mut tape, &refs, 0, &w).unwrap();
        for pix in 0..16 {
            let s: f32 = out.masks.iter().map(|(_, m)| m.to_vec()[pix]).sum();
            assert!((s - 1.0).abs() < 1e-5, "pixel {pix} sums to {s}");
        }
    }

    #[test]
    fn fused_output_stays_in_contributor_hull() {
        let w = mask_weights(4, 7);
        let mut rng = SimRng::new(8);
        let mut tape = Tape::inference();
        let maps: Vec<FeatureMap> = (0..3)
            .map(|i| {
                feature(
                    Owner::Node(i),
                    4,
                    4,
                    (0..64).map(|_| rng.range_f64(-2.0, 2.0) as f32).collect(),
                )
            })
            .collect();
        let refs: Vec<&FeatureMap> = maps.iter().collect();
        let out = fuse_spatial_attention(&mut tape, &refs, 0, &w).unwrap();
        let fused = out.fused.data.to_vec();
        let datas: Vec<Vec<f32>> = maps.iter().map(|m| m.data.to_vec()).collect();
        for idx in 0..64 {
            let lo = datas.iter().map(|d| d[idx]).fold(f32::INFINITY, f32::min);
            let hi = datas.iter().map(|d| d[idx]).fold(f32::NEG_INFINITY, f32::max);
            assert!(fused[idx] >= lo - 1e-5 && fused[idx] <= hi + 1e-5);
        }
    }

    #[test]
    fn result_is_invariant_to_contributor_order() {
        let w = mask_weights(4, 11);
        let mut rng = SimRng::new(13);
        let maps: Vec<FeatureMap> = (0..3)
            .map(|i| {
                feature(
                    Owner::Node(i),
                    4,
                    3,
                    (0..36).map(|_| rng.range_f64(-1.0, 1.0) as f32).collect(),
                )
            })
            .collect();
        let mut tape = Tape::inference();
        let base = fuse_spatial_attention(&mut tape, &[&maps[0], &maps[1], &maps[2]], 0, &w)
            .unwrap()
            .fused
            .data
            .to_vec();
        for (order, ego_at) in [([0usize, 2, 1], 0), ([1, 0, 2], 1), ([2, 1, 0], 2)] {
            let refs = [&maps[order[0]], &maps[order[1]], &maps[order[2]]];
            let out = fuse_spatial_attention(&mut tape, &refs, ego_at, &w).unwrap();
            assert_eq!(out.fused.data.to_vec(), base, "order {order:?}");
        }
    }

    #[test]
    fn usage_errors() {
        let w = mask_weights(4, 1);
        let mut tape = Tape::inference();
        assert!(matches!(
            fuse_spatial_attention(&mut tape, &[], 0, &w),
            Err(PipelineError::Usage(_))
        ));
        let a = feature(Owner::Node(0), 4, 2, vec![0.0; 16]);
        let b = feature(Owner::Node(1), 4, 3, vec![0.0; 36]);
        assert!(matches!(
            fuse_spatial_attention(&mut tape, &[&a, &b], 0, &w),
            Err(PipelineError::Shape(_))
        ));
    }
}
