use crate::numerics::{Tape, Tensor};
use crate::pipeline::{
    encode, fuse_spatial_attention, warp_to, FeatureMap, ModelWeights, Owner, PipelineError,
};
use crate::system::PreparedScenario;

/// Lazily encoded teacher features for one frame, shared across ego nodes so
/// each observation is encoded at most once.
pub struct TeacherFrameCache {
    features: Vec<Option<Tensor>>,
}

impl TeacherFrameCache {
    pub fn new(n_nodes: usize) -> TeacherFrameCache {
        TeacherFrameCache { features: vec![None; n_nodes] }
    }

    fn get(
        &mut self,
        tape: &mut Tape,
        prep: &PreparedScenario,
        t: usize,
        node: usize,
        teacher: &ModelWeights,
    ) -> Result<Tensor, PipelineError> {
        if self.features[node].is_none() {
            let feat = encode(tape, &prep.obs_tensor(t, node), &teacher.encoder)?;
            self.features[node] = Some(feat);
        }
        Ok(self.features[node].as_ref().expect("just filled").clone())
    }
}

/// Guidance feature for ego `i`: the frozen teacher encodes the current
/// observations of `{i} union contact_set`, warps them into the ego frame,
/// and fuses them with the teacher's own attention weights. No gradients
/// flow into the teacher, and the result is invariant to the order of
/// `contact_set`.
pub fn teacher_guidance(
    tape: &mut Tape,
    prep: &PreparedScenario,
    t: usize,
    ego: usize,
    contact_set: &[usize],
    teacher: &ModelWeights,
    cache: &mut TeacherFrameCache,
    extent_m: f64,
) -> Result<FeatureMap, PipelineError> {
    let poses = prep.poses(t);
    let ego_pose = poses[ego];
    let mut contributors: Vec<FeatureMap> = Vec::with_capacity(contact_set.len() + 1);
    contributors.push(FeatureMap {
        owner: Owner::Node(ego as u32),
        timestep: t,
        pose: ego_pose,
        extent_m,
        data: cache.get(tape, prep, t, ego, teacher)?,
    });
    for &j in contact_set {
        if j == ego {
            continue;
        }
        let feat = FeatureMap {
            owner: Owner::Node(j as u32),
            timestep: t,
            pose: poses[j],
            extent_m,
            data: cache.get(tape, prep, t, j, teacher)?,
        };
        contributors.push(warp_to(tape, &feat, ego_pose)?);
    }
    let refs: Vec<&FeatureMap> = contributors.iter().collect();
    Ok(fuse_spatial_attention(tape, &refs, 0, &teacher.mask)?.fused)
}
