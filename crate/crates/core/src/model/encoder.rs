use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::init::glorot_uniform;
use crate::numerics::{Conv3dGeometry, ParamStore, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// `C x T x H x W` of one input clip.
    pub input: [usize; 4],
    pub channels: Vec<usize>,
    pub strides: Vec<[usize; 3]>,
    pub kernel: usize,
    /// Fixed post-activation gain per stage; `None` derives it from the
    /// initialisation fan so activations keep their second moment.
    pub stage_scale: Option<Vec<f64>>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input: [1, 16, 32, 32],
            channels: vec![8, 16, 32],
            strides: vec![[1, 2, 2], [2, 2, 2], [2, 2, 2]],
            kernel: 3,
            stage_scale: None,
        }
    }
}

impl EncoderConfig {
    pub fn feature_dim(&self) -> usize {
        *self.channels.last().expect("at least one stage")
    }

    fn fans(&self, stage: usize) -> (usize, usize) {
        let k3 = self.kernel.pow(3);
        let c_in = if stage == 0 {
            self.input[0]
        } else {
            self.channels[stage - 1]
        };
        (c_in * k3, self.channels[stage] * k3)
    }

    pub fn scales(&self) -> Vec<f64> {
        match &self.stage_scale {
            Some(s) => s.clone(),
            None => (0..self.channels.len())
                .map(|i| {
                    let (fi, fo) = self.fans(i);
                    ((fi + fo) as f64 / fi as f64).sqrt()
                })
                .collect(),
        }
    }

    pub fn geometry(&self, stage: usize) -> Conv3dGeometry {
        let p = self.kernel / 2;
        Conv3dGeometry::new(self.strides[stage], [p, p, p])
    }

    /// Output temporal length of the last stage (width of the probe feature).
    pub fn probe_steps(&self) -> usize {
        let p = self.kernel / 2;
        self.strides
            .iter()
            .fold(self.input[1], |t, s| (t + 2 * p - self.kernel) / s[0] + 1)
    }

    pub fn weight_name(stage: usize) -> String {
        format!("encoder.conv{}.weight", stage + 1)
    }

    pub fn bias_name(stage: usize) -> String {
        format!("encoder.conv{}.bias", stage + 1)
    }

    pub fn init_params<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        let k = self.kernel;
        for stage in 0..self.channels.len() {
            let c_in = if stage == 0 {
                self.input[0]
            } else {
                self.channels[stage - 1]
            };
            let c_out = self.channels[stage];
            let (fi, fo) = self.fans(stage);
            store.insert(
                Self::weight_name(stage),
                glorot_uniform(&[c_out, c_in, k, k, k], fi, fo, rng),
            );
            store.insert(Self::bias_name(stage), Tensor::zeros(&[c_out]));
        }
    }
}

/// Pooled clip feature and the probe feature (last stage, pooled over space
/// only, flattened `C x T`).
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub pooled: Var,
    pub probe: Var,
}

pub(crate) fn forward<T: Scalar>(
    cfg: &EncoderConfig,
    store: &ParamStore<T>,
    tape: &mut Tape<T>,
    clip: Var,
) -> Result<EncoderOutput> {
    if tape.value(clip).shape() != cfg.input {
        return Err(Error::Shape {
            op: "encode",
            expected: cfg.input.to_vec(),
            got: tape.value(clip).shape().to_vec(),
        });
    }
    let scales = cfg.scales();
    let mut x = clip;
    for stage in 0..cfg.channels.len() {
        let missing = || {
            Error::invalid(
                "encode",
                format!("missing parameters for stage {}", stage + 1),
            )
        };
        let w = tape.param(
            store,
            store
                .id(&EncoderConfig::weight_name(stage))
                .ok_or_else(missing)?,
        )?;
        let b = tape.param(
            store,
            store
                .id(&EncoderConfig::bias_name(stage))
                .ok_or_else(missing)?,
        )?;
        x = tape.conv3d(x, w, cfg.geometry(stage))?;
        x = tape.add_channel_bias(x, b)?;
        x = tape.relu(x)?;
        let s = scales[stage];
        if s != 1.0 {
            x = tape.scale(x, T::from_f64_lossy(s))?;
        }
    }
    let pooled = tape.global_avg_pool(x)?;
    let probe = tape.spatial_avg_pool(x)?;
    let flat = tape.value(probe).len();
    let probe = tape.reshape(probe, &[flat])?;
    Ok(EncoderOutput { pooled, probe })
}
