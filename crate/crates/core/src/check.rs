//! Finite-difference verification of analytic gradients.
//!
//! Everything here runs at `f64` regardless of the training precision. The
//! op-level check projects the output onto a fixed random direction so a
//! single backward call covers every coordinate; the graph-level check
//! differentiates a scalar-valued tape program directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ops::DiffOp;
use crate::tape::{Tape, VarId};

const EPSILON_RANGE: (f64, f64) = (1e-6, 1e-4);

fn validate_epsilon(epsilon: f64) -> Result<()> {
    if !(EPSILON_RANGE.0..=EPSILON_RANGE.1).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "grad check epsilon must lie in [{}, {}], got {epsilon}",
            EPSILON_RANGE.0, EPSILON_RANGE.1
        )));
    }
    Ok(())
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

fn projected_forward(
    op: &dyn DiffOp<f64>,
    inputs: &[Matrix<f64>],
    projection: &Matrix<f64>,
) -> Result<f64> {
    let refs: Vec<&Matrix<f64>> = inputs.iter().collect();
    let out = op.forward(&refs)?;
    Ok(out.frob_dot(projection))
}

/// Checks one op's backward against central differences at the given inputs.
///
/// Returns the maximum over all input coordinates of
/// `|analytic - central| / max(1, |central|)`.
pub fn grad_check(
    op: &dyn DiffOp<f64>,
    inputs: &[Matrix<f64>],
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    validate_epsilon(epsilon)?;
    let refs: Vec<&Matrix<f64>> = inputs.iter().collect();
    let output = op.forward(&refs)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let projection = Matrix::from_fn(output.rows(), output.cols(), |_, _| {
        rng.gen_range(-1.0..1.0)
    });
    let analytic = op.backward(&refs, &output, &projection);

    let mut work: Vec<Matrix<f64>> = inputs.to_vec();
    let mut max_err = 0.0f64;
    for k in 0..inputs.len() {
        for r in 0..inputs[k].rows() {
            for c in 0..inputs[k].cols() {
                let orig = work[k].get(r, c);
                work[k].set(r, c, orig + epsilon);
                let plus = projected_forward(op, &work, &projection)?;
                work[k].set(r, c, orig - epsilon);
                let minus = projected_forward(op, &work, &projection)?;
                work[k].set(r, c, orig);
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(Error::NonFinitePerturbation {
                        input: k,
                        row: r,
                        col: c,
                    });
                }
                let numeric = (plus - minus) / (2.0 * epsilon);
                max_err = max_err.max(relative_error(analytic[k].get(r, c), numeric));
            }
        }
    }
    Ok(max_err)
}

/// Builder signature for graph-level checks: given a tape and the leaves for
/// each input, return a 1x1 root to differentiate.
pub type GraphBuilder = dyn Fn(&mut Tape<f64>, &[VarId]) -> Result<VarId>;

/// Checks a whole tape program (layers, losses, the full network) against
/// central differences of its scalar output.
pub fn grad_check_graph(
    build: &GraphBuilder,
    inputs: &[Matrix<f64>],
    epsilon: f64,
) -> Result<f64> {
    validate_epsilon(epsilon)?;

    let eval = |inputs: &[Matrix<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<VarId> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let root = build(&mut tape, &vars)?;
        if tape.value(root).shape() != (1, 1) {
            return Err(Error::shape(
                "grad_check_graph",
                format!("root must be 1x1, got {:?}", tape.value(root).shape()),
            ));
        }
        Ok(tape.value(root).get(0, 0))
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<VarId> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let root = build(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Matrix<f64>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut work: Vec<Matrix<f64>> = inputs.to_vec();
    let mut max_err = 0.0f64;
    for k in 0..inputs.len() {
        for r in 0..inputs[k].rows() {
            for c in 0..inputs[k].cols() {
                let orig = work[k].get(r, c);
                work[k].set(r, c, orig + epsilon);
                let plus = eval(&work)?;
                work[k].set(r, c, orig - epsilon);
                let minus = eval(&work)?;
                work[k].set(r, c, orig);
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(Error::NonFinitePerturbation {
                        input: k,
                        row: r,
                        col: c,
                    });
                }
                let numeric = (plus - minus) / (2.0 * epsilon);
                max_err = max_err.max(relative_error(analytic[k].get(r, c), numeric));
            }
        }
    }
    Ok(max_err)
}

/// A named gradient-check case; `run(seed)` draws one random point and
/// returns the max relative error there.
pub struct CheckCase {
    pub name: String,
    pub run: Box<dyn Fn(u64) -> Result<f64> + Send + Sync>,
}

impl CheckCase {
    pub fn new(
        name: impl Into<String>,
        run: impl Fn(u64) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        CheckCase {
            name: name.into(),
            run: Box::new(run),
        }
    }

    /// Max relative error over `points` seeded random points.
    pub fn run_points(&self, points: usize, base_seed: u64) -> Result<f64> {
        let mut worst = 0.0f64;
        for i in 0..points {
            worst = worst.max((self.run)(base_seed.wrapping_add(i as u64))?);
        }
        Ok(worst)
    }
}

/// Uniform random matrix in [-1, 1).
pub fn random_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Uniform random matrix bounded away from zero, for kinked activations.
pub fn random_matrix_away_from_zero(
    rng: &mut ChaCha20Rng,
    rows: usize,
    cols: usize,
) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| {
        let v: f64 = rng.gen_range(0.2..1.2);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Scalar;
    use crate::ops::{Affine, Axis, ChannelScale, MeanVarNorm, MulElem, Relu, Softmax, StatsPool};

    const EPS: f64 = 1e-5;

    #[test]
    fn affine_gradient_under_1e6() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let inputs = vec![
            random_matrix(&mut rng, 4, 3),
            random_matrix(&mut rng, 3, 2),
            random_matrix(&mut rng, 1, 2),
        ];
        let err = grad_check(&Affine, &inputs, EPS, 11).unwrap();
        assert!(err < 1e-6, "affine gradient error {err}");
    }

    #[test]
    fn softmax_gradient_under_1e6() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let inputs = vec![random_matrix(&mut rng, 5, 4)];
        for axis in [Axis::Time, Axis::Channel] {
            let err = grad_check(&Softmax { axis }, &inputs, EPS, 12).unwrap();
            assert!(err < 1e-6, "softmax gradient error {err}");
        }
    }

    #[test]
    fn sign_flipped_backward_is_detected() {
        struct FlippedAffine;
        impl DiffOp<f64> for FlippedAffine {
            fn name(&self) -> &str {
                "flipped_affine"
            }
            fn forward(&self, inputs: &[&Matrix<f64>]) -> Result<Matrix<f64>> {
                Affine.forward(inputs)
            }
            fn backward(
                &self,
                inputs: &[&Matrix<f64>],
                output: &Matrix<f64>,
                upstream: &Matrix<f64>,
            ) -> Vec<Matrix<f64>> {
                Affine
                    .backward(inputs, output, upstream)
                    .into_iter()
                    .map(|g| g.scale(-1.0))
                    .collect()
            }
        }
        // Inputs scaled so at least one numeric derivative exceeds 1 in
        // magnitude; the error at such a coordinate is exactly 2.
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let inputs = vec![
            random_matrix(&mut rng, 3, 3).scale(3.0),
            random_matrix(&mut rng, 3, 2).scale(3.0),
            random_matrix(&mut rng, 1, 2),
        ];
        let err = grad_check(&FlippedAffine, &inputs, EPS, 13).unwrap();
        assert!((err - 2.0).abs() < 1e-6, "sign flip error {err}");
    }

    #[test]
    fn epsilon_outside_range_rejected() {
        let inputs = vec![Matrix::<f64>::zeros(1, 1)];
        assert!(grad_check(&Relu, &inputs, 1e-3, 0).is_err());
        assert!(grad_check(&Relu, &inputs, 1e-7, 0).is_err());
    }

    #[test]
    fn graph_check_composition() {
        // f(x) = mean-part of stats over (relu(x) .* gate) style graph.
        let build = |tape: &mut Tape<f64>, vars: &[VarId]| -> Result<VarId> {
            let x = vars[0];
            let g = vars[1];
            let r = tape.apply(Relu, &[x])?;
            let scaled = tape.apply(ChannelScale, &[r, g])?;
            let n = tape.apply(MeanVarNorm { eps: 1e-5 }, &[scaled])?;
            let m = tape.apply(MulElem, &[n, n])?;
            let pooled = tape.apply(StatsPool, &[m])?;
            // reduce 1x2C to scalar with a fixed affine
            let w = tape.leaf(Matrix::from_fn(pooled_cols(tape, pooled), 1, |r, _| {
                0.3 + 0.1 * r as f64
            }));
            let b = tape.leaf(Matrix::zeros(1, 1));
            tape.apply(Affine, &[pooled, w, b])
        };
        fn pooled_cols(tape: &Tape<f64>, v: VarId) -> usize {
            tape.value(v).cols()
        }
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let inputs = vec![
            random_matrix_away_from_zero(&mut rng, 6, 3),
            Matrix::from_fn(1, 3, |_, c| 0.5 + 0.2 * c as f64),
        ];
        let err = grad_check_graph(&build, &inputs, EPS).unwrap();
        assert!(err < 1e-6, "graph gradient error {err}");
    }

    #[test]
    fn scalar_trait_roundtrip() {
        assert_eq!(<f32 as Scalar>::from_f64(0.5).to_f64(), 0.5);
    }
}
