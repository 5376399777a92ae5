use serde::{Deserialize, Serialize};

use super::mlp::{MlpGrads, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Plain gradient descent or Adam over the tensors of one network.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(AdamState),
}

#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam(AdamState {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                step: 0,
                m: Vec::new(),
                v: Vec::new(),
            }),
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) {
        match self {
            Optimizer::Sgd { lr } => {
                let lr = *lr;
                params.zip_tensors_mut(grads, |_, p, g| {
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= lr * gv;
                    }
                });
            }
            Optimizer::Adam(st) => {
                if st.m.is_empty() {
                    st.m = grads
                        .tensor_lens()
                        .into_iter()
                        .map(|n| vec![0.0; n])
                        .collect();
                    st.v = st.m.clone();
                }
                st.step += 1;
                let bc1 = 1.0 - st.beta1.powi(st.step);
                let bc2 = 1.0 - st.beta2.powi(st.step);
                let (b1, b2, eps, lr) = (st.beta1, st.beta2, st.eps, st.lr);
                let (ms, vs) = (&mut st.m, &mut st.v);
                params.zip_tensors_mut(grads, |slot, p, g| {
                    let m = &mut ms[slot];
                    let v = &mut vs[slot];
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        p[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                });
            }
        }
    }
}
