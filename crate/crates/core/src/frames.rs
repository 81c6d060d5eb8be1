//! Local frames: per-frame KMPs trained on projected demonstrations whose
//! predictions are mapped back and fused by a Gaussian product.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::database::ReferenceDatabase;
use crate::error::{check_dim, KmpError, Result};
use crate::gaussian::{Gaussian, SPD_REPAIR_SCALE};
use crate::gmm::{fit_em, Demo, DemoSet, EmOptions};
use crate::kernels::{Kernel, KernelSpec};
use crate::kmp::{update_database, DesiredPoint, KmpModel, Prediction, UpdateAction};
use crate::linalg::{block_diag, from_row_major, symmetrize, to_row_major, CholeskyFactor};

const ORTHO_TOL: f64 = 1e-10;

/// Affine frame `(A, b)` with separate input and output blocks. Outputs of
/// twice the frame dimension are `[position; velocity]` and transform with
/// `blockdiag(A, A)` and offset `[b; 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFrame {
    input_rot: DMatrix<f64>,
    input_offset: DVector<f64>,
    output_rot: DMatrix<f64>,
    output_offset: DVector<f64>,
}

fn check_orthogonal(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(KmpError::validation(format!("{what} rotation is not square")));
    }
    let n = a.nrows();
    let err = (a.transpose() * a - DMatrix::identity(n, n)).abs().max();
    if err > ORTHO_TOL {
        return Err(KmpError::validation(format!("{what} rotation is not orthogonal (error {err:e})")));
    }
    Ok(())
}

impl LocalFrame {
    pub fn new(
        input_rot: DMatrix<f64>,
        input_offset: DVector<f64>,
        output_rot: DMatrix<f64>,
        output_offset: DVector<f64>,
    ) -> Result<Self> {
        check_orthogonal(&input_rot, "input")?;
        check_orthogonal(&output_rot, "output")?;
        check_dim("input offset", input_rot.nrows(), input_offset.len())?;
        check_dim("output offset", output_rot.nrows(), output_offset.len())?;
        Ok(LocalFrame {
            input_rot,
            input_offset,
            output_rot,
            output_offset,
        })
    }

    /// Frame for a time input: `A_s = 1`, `b_s = 0`.
    pub fn time(output_rot: DMatrix<f64>, output_offset: DVector<f64>) -> Result<Self> {
        Self::new(DMatrix::identity(1, 1), DVector::zeros(1), output_rot, output_offset)
    }

    /// Pure translation of the outputs for a time input.
    pub fn translation(offset: DVector<f64>) -> Self {
        let d = offset.len();
        Self::time(DMatrix::identity(d, d), offset).expect("identity is orthogonal")
    }

    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        LocalFrame {
            input_rot: DMatrix::identity(input_dim, input_dim),
            input_offset: DVector::zeros(input_dim),
            output_rot: DMatrix::identity(output_dim, output_dim),
            output_offset: DVector::zeros(output_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_offset.len()
    }

    /// Position dimension of the frame.
    pub fn output_dim(&self) -> usize {
        self.output_offset.len()
    }

    pub fn output_rotation(&self) -> &DMatrix<f64> {
        &self.output_rot
    }

    pub fn output_offset(&self) -> &DVector<f64> {
        &self.output_offset
    }

    /// Same frame with a translated output origin.
    pub fn translated(&self, v: &DVector<f64>) -> Result<Self> {
        check_dim("translation", self.output_dim(), v.len())?;
        let mut f = self.clone();
        f.output_offset += v;
        Ok(f)
    }

    /// `(A, b)` acting on outputs of dimension `dim` (`O` or `2O`).
    pub fn output_map(&self, dim: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let o = self.output_dim();
        if dim == o {
            Ok((self.output_rot.clone(), self.output_offset.clone()))
        } else if dim == 2 * o {
            let mut b = DVector::zeros(dim);
            b.rows_mut(0, o).copy_from(&self.output_offset);
            Ok((block_diag(&[&self.output_rot, &self.output_rot]), b))
        } else {
            Err(KmpError::DimensionMismatch {
                context: "frame output",
                expected: o,
                found: dim,
            })
        }
    }

    pub fn project_input(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("frame input", self.input_dim(), s.len())?;
        Ok(self.input_rot.transpose() * (s - &self.input_offset))
    }

    pub fn project_output(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        let (a, b) = self.output_map(xi.len())?;
        Ok(a.transpose() * (xi - b))
    }

    /// `blockdiag(A_s, A_ξ)⁻¹ ([s; ξ] − [b_s; b_ξ])`; rotations are
    /// orthogonal so the inverse is the transpose.
    pub fn project(&self, s: &DVector<f64>, xi: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        Ok((self.project_input(s)?, self.project_output(xi)?))
    }

    pub fn unproject_input(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("frame input", self.input_dim(), s.len())?;
        Ok(&self.input_rot * s + &self.input_offset)
    }

    pub fn unproject_output(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        let (a, b) = self.output_map(xi.len())?;
        Ok(a * xi + b)
    }

    /// `N(A μ + b, A Σ Aᵀ)` for the raw moments; works for PSD covariances.
    pub fn unproject_moments(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (a, b) = self.output_map(mean.len())?;
        check_dim("frame covariance", mean.len(), cov.nrows())?;
        Ok((&a * mean + b, symmetrize(&(&a * cov * a.transpose()))))
    }

    pub fn unproject_gaussian(&self, g: &Gaussian) -> Result<Gaussian> {
        let (m, c) = self.unproject_moments(g.mean(), g.cov())?;
        Gaussian::new(m, c)
    }

    /// Projects a base-frame desired point into the frame.
    pub fn project_point(&self, p: &DesiredPoint) -> Result<DesiredPoint> {
        let (a, _) = self.output_map(p.mean.len())?;
        DesiredPoint::new(
            self.project_input(&p.input)?,
            self.project_output(&p.mean)?,
            a.transpose() * &p.cov * &a,
        )
    }

    pub fn to_document(&self) -> FrameDocument {
        FrameDocument {
            a_row_major: to_row_major(&self.output_rot),
            b: self.output_offset.as_slice().to_vec(),
        }
    }

    /// Frame for a time input from its serialized output block.
    pub fn from_document(doc: &FrameDocument) -> Result<Self> {
        let d = doc.b.len();
        let a = from_row_major(d, d, &doc.a_row_major).ok_or(KmpError::DimensionMismatch {
            context: "frame rotation",
            expected: d * d,
            found: doc.a_row_major.len(),
        })?;
        Self::time(a, DVector::from_column_slice(&doc.b))
    }
}

/// Serialized time-input frame: output rotation and translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDocument {
    #[serde(rename = "A_row_major")]
    pub a_row_major: Vec<f64>,
    pub b: Vec<f64>,
}

/// Planar rotation by `theta` radians.
pub fn rotation_2d(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Precision-weighted fusion of raw moments. Each covariance gets
/// `1e-10·trace/O` on the diagonal if it fails to factorize.
pub fn fuse(terms: &[(DVector<f64>, DMatrix<f64>)]) -> Result<Prediction> {
    let first = terms.first().ok_or_else(|| KmpError::validation("nothing to fuse"))?;
    let o = first.0.len();
    let mut precision = DMatrix::zeros(o, o);
    let mut info = DVector::zeros(o);
    for (p, (mean, cov)) in terms.iter().enumerate() {
        check_dim("fused term", o, mean.len())?;
        let jitter = SPD_REPAIR_SCALE * cov.trace() / o as f64;
        let f = CholeskyFactor::with_jitter(cov, jitter)
            .map_err(|_| {
                KmpError::NotPositiveDefinite {
                    context: "frame covariance".into(),
                }
                .in_frame(p)
            })?
            .factor;
        precision += f.inverse();
        info += f.solve_vec(mean);
    }
    let pf = CholeskyFactor::with_jitter(&symmetrize(&precision), SPD_REPAIR_SCALE * precision.trace() / o as f64)
        .map_err(|_| KmpError::NotPositiveDefinite {
            context: "fused precision".into(),
        })?
        .factor;
    Ok(Prediction {
        mean: pf.solve_vec(&info),
        cov: pf.inverse(),
    })
}

/// One KMP per frame plus the frames used at prediction time.
#[derive(Debug, Clone)]
pub struct LocalKmpSet<K: Kernel = KernelSpec> {
    frames: Vec<LocalFrame>,
    models: Vec<KmpModel<K>>,
}

/// How local reference databases are obtained during learning.
#[derive(Debug, Clone)]
pub struct LocalLearnOptions<K> {
    pub em: EmOptions,
    /// GMR query inputs in local coordinates.
    pub reference_inputs: Vec<DVector<f64>>,
    pub kernel: K,
    pub lambda: f64,
}

impl<K: Kernel + Clone> LocalKmpSet<K> {
    pub fn from_models(frames: Vec<LocalFrame>, models: Vec<KmpModel<K>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(KmpError::validation("local set needs at least one frame"));
        }
        check_dim("models per frame", frames.len(), models.len())?;
        for m in &models[1..] {
            check_dim("local model output", models[0].output_dim(), m.output_dim())?;
            if m.lambda() != models[0].lambda() {
                return Err(KmpError::validation("local models must share lambda"));
            }
        }
        Ok(LocalKmpSet { frames, models })
    }

    /// Projects demonstration `h` into frame `training_frames[h][p]`, fits
    /// a mixture per frame, extracts a local reference database and builds
    /// a KMP per frame. Prediction frames start as demonstration 0's
    /// frames; use [`Self::with_frames`] for new task parameters.
    pub fn learn(demos: &DemoSet, training_frames: &[Vec<LocalFrame>], options: &LocalLearnOptions<K>) -> Result<Self> {
        check_dim("frame sets per demonstration", demos.num_demos(), training_frames.len())?;
        let p_count = training_frames[0].len();
        if p_count == 0 {
            return Err(KmpError::validation("local set needs at least one frame"));
        }
        for f in training_frames {
            check_dim("frames per demonstration", p_count, f.len())?;
        }
        let mut models = Vec::with_capacity(p_count);
        for p in 0..p_count {
            let build = || -> Result<KmpModel<K>> {
                let local = demos
                    .demos()
                    .iter()
                    .zip(training_frames)
                    .map(|(d, frames)| {
                        let frame = &frames[p];
                        let inputs = d.inputs.iter().map(|s| frame.project_input(s)).collect::<Result<_>>()?;
                        let outputs = d.outputs.iter().map(|x| frame.project_output(x)).collect::<Result<_>>()?;
                        Demo::new(inputs, outputs)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let gmm = fit_em(&DemoSet::new(local)?, &options.em)?.model;
                let db = gmm.extract_reference(&options.reference_inputs)?;
                KmpModel::build(db, options.kernel.clone(), options.lambda)
            };
            models.push(build().map_err(|e| e.in_frame(p))?);
        }
        Self::from_models(training_frames[0].clone(), models)
    }

    /// Same models with repositioned frames.
    pub fn with_frames(&self, frames: Vec<LocalFrame>) -> Result<Self> {
        check_dim("frames", self.frames.len(), frames.len())?;
        Ok(LocalKmpSet {
            frames,
            models: self.models.clone(),
        })
    }

    /// Projects the base-frame point into every frame, updates each local
    /// database and rebuilds the models.
    pub fn update_local(&self, point: &DesiredPoint, zeta: f64) -> Result<(Self, Vec<UpdateAction>)> {
        let mut models = Vec::with_capacity(self.models.len());
        let mut actions = Vec::with_capacity(self.models.len());
        for (p, (frame, model)) in self.frames.iter().zip(&self.models).enumerate() {
            let step = || -> Result<(KmpModel<K>, UpdateAction)> {
                let local = frame.project_point(point)?;
                let (db, action) = update_database(model.database(), &local, zeta)?;
                Ok((model.with_database(db)?, action))
            };
            let (m, a) = step().map_err(|e| e.in_frame(p))?;
            models.push(m);
            actions.push(a);
        }
        Ok((
            LocalKmpSet {
                frames: self.frames.clone(),
                models,
            },
            actions,
        ))
    }
}

impl<K: Kernel> LocalKmpSet<K> {
    pub fn frames(&self) -> &[LocalFrame] {
        &self.frames
    }

    pub fn models(&self) -> &[KmpModel<K>] {
        &self.models
    }

    pub fn databases(&self) -> Vec<&ReferenceDatabase> {
        self.models.iter().map(KmpModel::database).collect()
    }

    /// Per-frame predictions mapped into the base frame.
    pub fn frame_predictions(&self, query: &DVector<f64>) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        self.frames
            .iter()
            .zip(&self.models)
            .enumerate()
            .map(|(p, (frame, model))| {
                let step = || {
                    let local = model.predict(&frame.project_input(query)?)?;
                    frame.unproject_moments(&local.mean, &local.cov)
                };
                step().map_err(|e| e.in_frame(p))
            })
            .collect()
    }

    /// Fused base-frame prediction `(Σ_p Σ̃_p⁻¹)⁻¹ Σ_p Σ̃_p⁻¹ μ̃_p`.
    pub fn local_predict(&self, query: &DVector<f64>) -> Result<Prediction> {
        let terms = self.frame_predictions(query)?;
        if terms.len() == 1 {
            let (mean, cov) = terms.into_iter().next().expect("one term");
            return Ok(Prediction { mean, cov });
        }
        fuse(&terms)
    }
}
