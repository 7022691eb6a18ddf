//! Problem families, their `λ_max`, seeded synthetic generators and the deblurring builder.
//!
//! A [`ProblemSpec`] is a flat `key = value` file. Shape fields left unset fall back to
//! per-family defaults, and λ is always resolved to an absolute value before solving.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::fmt::Write as _;
use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fbe::CompositeProblem;
use crate::io::{self, DataFormat, Image};
use crate::linops::{CsrMatrix, LinearOperator};
use crate::prox::{GroupL2, L1Norm, NuclearNorm, OrthogonalCompose, ProxOracle, SvdPolicy};
use crate::smooth::{logistic_loss, quadratic_loss, robust_loss, LinearLoss, SmoothOracle};
use crate::vecops::norm_inf;

/// Haar levels used by the restoration family; image sides must be multiples of `2^4`.
pub const HAAR_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Lasso,
    Logreg,
    GroupLasso,
    Matcomp,
    Imrestore,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Lasso,
        Family::Logreg,
        Family::GroupLasso,
        Family::Matcomp,
        Family::Imrestore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Lasso => "lasso",
            Family::Logreg => "logreg",
            Family::GroupLasso => "group-lasso",
            Family::Matcomp => "matcomp",
            Family::Imrestore => "imrestore",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s || (s == "group_lasso" && *f == Family::GroupLasso))
            .ok_or_else(|| {
                Error::param(format!(
                    "unknown family '{s}' (expected lasso, logreg, group-lasso, matcomp or imrestore)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaSpec {
    /// Multiple of `λ_max`, in `(0, 1]`.
    Fraction(f64),
    Absolute(f64),
}

/// Problem description. `None` fields take the family defaults listed in [`ProblemSpec::set`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub family: Family,
    pub lambda: Option<LambdaSpec>,
    pub seed: u64,
    pub noise: Option<f64>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub density: Option<f64>,
    pub blocks: Option<usize>,
    pub block_size: Option<usize>,
    pub active_blocks: Option<usize>,
    pub rank: Option<usize>,
    pub observed: Option<f64>,
    pub svd: SvdPolicy,
    /// Data matrix file (lasso, group-lasso).
    pub matrix: Option<String>,
    /// Right-hand side vector file (lasso, group-lasso).
    pub rhs: Option<String>,
    /// LIBSVM file (logreg).
    pub data: Option<String>,
    /// Overrides the format implied by the extension of `matrix`.
    pub format: Option<DataFormat>,
    /// Observed entries with values as a MatrixMarket coordinate file (matcomp).
    pub entries: Option<String>,
    /// PGM path or `phantom` (imrestore).
    pub image: Option<String>,
    pub image_size: Option<usize>,
    pub blur_size: Option<usize>,
    pub blur_sigma: Option<f64>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::param(format!("bad value '{value}' for '{key}'")))
}

impl ProblemSpec {
    pub fn new(family: Family) -> Self {
        ProblemSpec {
            family,
            lambda: None,
            seed: 0,
            noise: None,
            m: None,
            n: None,
            density: None,
            blocks: None,
            block_size: None,
            active_blocks: None,
            rank: None,
            observed: None,
            svd: SvdPolicy::Full,
            matrix: None,
            rhs: None,
            data: None,
            format: None,
            entries: None,
            image: None,
            image_size: None,
            blur_size: None,
            blur_sigma: None,
        }
    }

    /// Applies one `key = value` setting. Returns `Ok(false)` for keys this type does not own,
    /// so callers can layer their own keys on the same file.
    ///
    /// Family defaults: lasso and logreg `m = 512, n = 1024, density = 0.1`;
    /// group-lasso `m = 200, blocks = 100, block_size = 10, active_blocks = 10`;
    /// matcomp `m = 50, n = 40, rank = 3, observed = 0.5`; all of these `noise = 0.1`,
    /// `lambda_fraction = 0.05`. imrestore: `image = phantom, image_size = 32,
    /// blur_size = 9, blur_sigma = 4, noise = 1e-3, lambda = 1e-4`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let value = value.trim();
        match key.trim() {
            "family" => self.family = value.parse()?,
            "lambda" => self.lambda = Some(LambdaSpec::Absolute(parse_value(key, value)?)),
            "lambda_fraction" => self.lambda = Some(LambdaSpec::Fraction(parse_value(key, value)?)),
            "seed" => self.seed = parse_value(key, value)?,
            "noise" => self.noise = Some(parse_value(key, value)?),
            "m" => self.m = Some(parse_value(key, value)?),
            "n" => self.n = Some(parse_value(key, value)?),
            "density" => self.density = Some(parse_value(key, value)?),
            "blocks" => self.blocks = Some(parse_value(key, value)?),
            "block_size" => self.block_size = Some(parse_value(key, value)?),
            "active_blocks" => self.active_blocks = Some(parse_value(key, value)?),
            "rank" => self.rank = Some(parse_value(key, value)?),
            "observed" => self.observed = Some(parse_value(key, value)?),
            "svd" => {
                self.svd = match value {
                    "full" => SvdPolicy::Full,
                    "rank-adaptive" => SvdPolicy::RankAdaptive,
                    _ => return Err(Error::param(format!("svd must be full or rank-adaptive, got '{value}'"))),
                }
            }
            "matrix" => self.matrix = Some(value.to_string()),
            "rhs" => self.rhs = Some(value.to_string()),
            "data" => self.data = Some(value.to_string()),
            "format" => self.format = Some(value.parse()?),
            "entries" => self.entries = Some(value.to_string()),
            "image" => self.image = Some(value.to_string()),
            "image_size" => self.image_size = Some(parse_value(key, value)?),
            "blur_size" => self.blur_size = Some(parse_value(key, value)?),
            "blur_sigma" => self.blur_sigma = Some(parse_value(key, value)?),
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses a whole file; unknown keys are errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut spec: Option<ProblemSpec> = None;
        for_each_setting(text, path, |line, key, value| {
            let s = spec.get_or_insert_with(|| ProblemSpec::new(Family::Lasso));
            match s.set(key, value) {
                Ok(true) => Ok(()),
                Ok(false) => Err(parse_error(path, line, format!("unknown key '{key}'"))),
                Err(e) => Err(parse_error(path, line, e.to_string())),
            }
        })?;
        let spec = spec.ok_or_else(|| parse_error(path, 1, "empty problem spec"))?;
        if !text.lines().any(|l| strip(l).split('=').next().map(str::trim) == Some("family")) {
            return Err(parse_error(path, 1, "missing 'family'"));
        }
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Inverse of [`ProblemSpec::parse`]; floats are written with round-trip precision.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "family = {}", self.family);
        match self.lambda {
            Some(LambdaSpec::Absolute(v)) => {
                let _ = writeln!(out, "lambda = {v:?}");
            }
            Some(LambdaSpec::Fraction(v)) => {
                let _ = writeln!(out, "lambda_fraction = {v:?}");
            }
            None => {}
        }
        let _ = writeln!(out, "seed = {}", self.seed);
        let mut put = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                let _ = writeln!(out, "{key} = {v}");
            }
        };
        put("noise", self.noise.map(|v| format!("{v:?}")));
        put("m", self.m.map(|v| v.to_string()));
        put("n", self.n.map(|v| v.to_string()));
        put("density", self.density.map(|v| format!("{v:?}")));
        put("blocks", self.blocks.map(|v| v.to_string()));
        put("block_size", self.block_size.map(|v| v.to_string()));
        put("active_blocks", self.active_blocks.map(|v| v.to_string()));
        put("rank", self.rank.map(|v| v.to_string()));
        put("observed", self.observed.map(|v| format!("{v:?}")));
        put(
            "svd",
            (self.svd == SvdPolicy::RankAdaptive).then(|| "rank-adaptive".to_string()),
        );
        put("matrix", self.matrix.clone());
        put("rhs", self.rhs.clone());
        put("data", self.data.clone());
        put(
            "format",
            self.format.map(|f| {
                match f {
                    DataFormat::Libsvm => "libsvm",
                    DataFormat::MatrixMarket => "matrixmarket",
                    DataFormat::Csv => "csv",
                    DataFormat::Pgm => "pgm",
                }
                .to_string()
            }),
        );
        put("entries", self.entries.clone());
        put("image", self.image.clone());
        put("image_size", self.image_size.map(|v| v.to_string()));
        put("blur_size", self.blur_size.map(|v| v.to_string()));
        put("blur_sigma", self.blur_sigma.map(|v| format!("{v:?}")));
        out
    }

    fn uses_files(&self) -> bool {
        self.matrix.is_some() || self.data.is_some() || self.entries.is_some()
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn strip(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

/// Calls `apply(line, key, value)` for every `key = value` line, skipping blanks and `#` comments.
pub fn for_each_setting<F>(text: &str, path: &Path, mut apply: F) -> Result<()>
where
    F: FnMut(usize, &str, &str) -> Result<()>,
{
    for (i, raw) in text.lines().enumerate() {
        let content = strip(raw);
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| parse_error(path, i + 1, "expected 'key = value'"))?;
        apply(i + 1, key.trim(), value.trim())?;
    }
    Ok(())
}

/// Smallest λ for which zero is optimal.
///
/// lasso `‖Aᵀb‖_∞`; logreg `½‖Aᵀb‖_∞`; group-lasso `max_i ‖A_iᵀb‖₂` over `blocks`.
pub fn lambda_max(family: Family, a: &LinearOperator, b: &[f64], blocks: Option<&[Vec<usize>]>) -> Result<f64> {
    check_len("λ_max data", a.output_dim(), b)?;
    let atb = a.apply_adjoint(b)?;
    match family {
        Family::Lasso => Ok(norm_inf(&atb)),
        Family::Logreg => Ok(0.5 * norm_inf(&atb)),
        Family::GroupLasso => {
            let blocks = blocks.ok_or_else(|| Error::param("group-lasso λ_max needs the block partition"))?;
            Ok(blocks
                .iter()
                .map(|blk| blk.iter().map(|&i| atb[i] * atb[i]).sum::<f64>().sqrt())
                .fold(0.0, f64::max))
        }
        Family::Matcomp | Family::Imrestore => Err(Error::Unsupported(format!(
            "closed-form λ_max is defined for lasso, logreg and group-lasso, not {family}"
        ))),
    }
}

/// `‖∇f(0)‖₂` of the `rows×cols` column-major gradient: zero is optimal for `λ‖X‖_*`
/// exactly when `λ` is at least this spectral norm.
pub fn lambda_max_nuclear(grad_at_zero: &[f64], rows: usize, cols: usize) -> Result<f64> {
    check_len("nuclear λ_max gradient", rows * cols, grad_at_zero)?;
    let g = DMatrix::from_column_slice(rows, cols, grad_at_zero);
    Ok(g.singular_values().max())
}

/// `‖W∇f(0)‖_∞`: zero is critical for `f + λ‖W·‖₁` with orthonormal `W` at and above it.
pub fn lambda_max_analysis(grad_at_zero: &[f64], w: &LinearOperator) -> Result<f64> {
    Ok(norm_inf(&w.apply(grad_at_zero)?))
}

/// Raw arrays behind a built instance, kept so they can be written back to disk.
#[derive(Debug, Clone, PartialEq)]
pub enum RawData {
    /// Row-major dense `A` with right-hand side or labels.
    Dense { rows: usize, cols: usize, a: Vec<f64>, b: Vec<f64> },
    /// Observed `(row, col)` pairs and values of a column-major matrix.
    Entries {
        rows: usize,
        cols: usize,
        entries: Vec<(usize, usize)>,
        values: Vec<f64>,
    },
    /// Clean image and the blurred noisy observation.
    Images { clean: Image, observed: Image },
    /// Loaded from files; nothing new to write.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub family: Family,
    pub spec: ProblemSpec,
    pub lambda: f64,
    pub lambda_max: Option<f64>,
    pub dim: usize,
    pub lipschitz: Option<f64>,
    pub x_true: Option<Vec<f64>>,
    /// Hash of the bit patterns of the noise draw.
    pub noise_hash: Option<u64>,
    pub block_sizes: Option<Vec<usize>>,
    pub matrix_shape: Option<(usize, usize)>,
}

pub struct BuiltProblem {
    pub problem: CompositeProblem,
    pub meta: Metadata,
    pub raw: RawData,
}

impl BuiltProblem {
    pub fn x0(&self) -> Vec<f64> {
        vec![0.0; self.problem.dim()]
    }
}

fn hash_bits(v: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    for x in v {
        h.write_u64(x.to_bits());
    }
    h.finish()
}

fn normals(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn resolve_lambda(spec: &ProblemSpec, default: LambdaSpec, lmax: Option<f64>) -> Result<f64> {
    match spec.lambda.unwrap_or(default) {
        LambdaSpec::Absolute(v) if v >= 0.0 && v.is_finite() => Ok(v),
        LambdaSpec::Absolute(v) => Err(Error::param(format!("λ = {v} must be nonnegative"))),
        LambdaSpec::Fraction(t) if t > 0.0 && t <= 1.0 => {
            let lmax = lmax.ok_or_else(|| Error::param("λ fraction needs a computable λ_max"))?;
            Ok(t * lmax)
        }
        LambdaSpec::Fraction(t) => Err(Error::param(format!("λ fraction {t} outside (0, 1]"))),
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::param(format!("{name} = {p} outside [0, 1]")))
    }
}

fn positive(name: &str, v: usize) -> Result<usize> {
    if v == 0 {
        Err(Error::param(format!("{name} must be positive")))
    } else {
        Ok(v)
    }
}

const DEFAULT_FRACTION: LambdaSpec = LambdaSpec::Fraction(0.05);

/// Builds the instance described by `spec`; relative file names resolve against `base`.
pub fn build_problem(spec: &ProblemSpec, base: &Path) -> Result<BuiltProblem> {
    if spec.family == Family::Imrestore {
        return build_imrestore_spec(spec, base);
    }
    if spec.uses_files() {
        build_from_files(spec, base)
    } else {
        gen_synthetic(spec)
    }
}

fn assemble(
    spec: &ProblemSpec,
    f: LinearLoss,
    g: Arc<dyn ProxOracle>,
    lambda: f64,
    lmax: Option<f64>,
) -> Result<(CompositeProblem, Metadata)> {
    let dim = f.dim();
    let lipschitz = f.lipschitz();
    let problem = CompositeProblem::new(Arc::new(f), g)?;
    let meta = Metadata {
        family: spec.family,
        spec: spec.clone(),
        lambda,
        lambda_max: lmax,
        dim,
        lipschitz,
        x_true: None,
        noise_hash: None,
        block_sizes: None,
        matrix_shape: None,
    };
    Ok((problem, meta))
}

/// Seeded synthetic instance. `A` has standard normal entries. Lasso and logreg draw
/// `x_true` entrywise nonzero with probability `density`; group-lasso activates
/// `active_blocks` whole blocks; matcomp uses a rank-`rank` product of normal factors.
/// Observations carry additive `noise`·N(0, 1); logreg labels are the signs of the noisy
/// margins with ties sent to `+1`.
pub fn gen_synthetic(spec: &ProblemSpec) -> Result<BuiltProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = spec.noise.unwrap_or(0.1);
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::param(format!("noise = {noise} must be nonnegative")));
    }
    match spec.family {
        Family::Lasso | Family::Logreg => {
            let m = positive("m", spec.m.unwrap_or(512))?;
            let n = positive("n", spec.n.unwrap_or(1024))?;
            let density = spec.density.unwrap_or(0.1);
            check_probability("density", density)?;
            let a = normals(m * n, &mut rng);
            let x_true: Vec<f64> = (0..n)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    if rng.random::<f64>() < density {
                        v
                    } else {
                        0.0
                    }
                })
                .collect();
            let eps = normals(m, &mut rng);
            let op = Arc::new(LinearOperator::dense(m, n, a.clone())?);
            let clean = op.apply(&x_true)?;
            let b: Vec<f64> = if spec.family == Family::Lasso {
                clean.iter().zip(&eps).map(|(c, e)| c + noise * e).collect()
            } else {
                clean
                    .iter()
                    .zip(&eps)
                    .map(|(c, e)| if c + noise * e >= 0.0 { 1.0 } else { -1.0 })
                    .collect()
            };
            let lmax = lambda_max(spec.family, &op, &b, None)?;
            let lambda = resolve_lambda(spec, DEFAULT_FRACTION, Some(lmax))?;
            let (f, g): (LinearLoss, Arc<dyn ProxOracle>) = if spec.family == Family::Lasso {
                (quadratic_loss(op, b.clone())?, Arc::new(L1Norm::new(lambda, n)?))
            } else {
                (logistic_loss(op, b.clone())?, Arc::new(L1Norm::new(lambda, n)?))
            };
            let (problem, mut meta) = assemble(spec, f, g, lambda, Some(lmax))?;
            meta.x_true = Some(x_true);
            meta.noise_hash = Some(hash_bits(&eps));
            Ok(BuiltProblem {
                problem,
                meta,
                raw: RawData::Dense { rows: m, cols: n, a, b },
            })
        }
        Family::GroupLasso => {
            let m = positive("m", spec.m.unwrap_or(200))?;
            let blocks = positive("blocks", spec.blocks.unwrap_or(100))?;
            let size = positive("block_size", spec.block_size.unwrap_or(10))?;
            let active = spec.active_blocks.unwrap_or(10.min(blocks));
            let n = blocks * size;
            if let Some(given) = spec.n {
                if given != n {
                    return Err(Error::param(format!(
                        "n = {given} disagrees with blocks·block_size = {n}"
                    )));
                }
            }
            if active > blocks {
                return Err(Error::param(format!(
                    "active_blocks = {active} exceeds blocks = {blocks}"
                )));
            }
            let a = normals(m * n, &mut rng);
            let mut chosen = sample(&mut rng, blocks, active).into_vec();
            chosen.sort_unstable();
            let mut x_true = vec![0.0; n];
            for blk in chosen {
                for v in &mut x_true[blk * size..(blk + 1) * size] {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
            let eps = normals(m, &mut rng);
            let op = Arc::new(LinearOperator::dense(m, n, a.clone())?);
            let b: Vec<f64> = op
                .apply(&x_true)?
                .iter()
                .zip(&eps)
                .map(|(c, e)| c + noise * e)
                .collect();
            let sizes = vec![size; blocks];
            let partition = contiguous_blocks(&sizes);
            let lmax = lambda_max(Family::GroupLasso, &op, &b, Some(&partition))?;
            let lambda = resolve_lambda(spec, DEFAULT_FRACTION, Some(lmax))?;
            let f = quadratic_loss(op, b.clone())?;
            let g = Arc::new(GroupL2::contiguous(lambda, &sizes)?);
            let (problem, mut meta) = assemble(spec, f, g, lambda, Some(lmax))?;
            meta.x_true = Some(x_true);
            meta.noise_hash = Some(hash_bits(&eps));
            meta.block_sizes = Some(sizes);
            Ok(BuiltProblem {
                problem,
                meta,
                raw: RawData::Dense { rows: m, cols: n, a, b },
            })
        }
        Family::Matcomp => {
            let rows = positive("m", spec.m.unwrap_or(50))?;
            let cols = positive("n", spec.n.unwrap_or(40))?;
            let rank = positive("rank", spec.rank.unwrap_or(3))?;
            let observed = spec.observed.unwrap_or(0.5);
            check_probability("observed", observed)?;
            let u = DMatrix::from_column_slice(rows, rank, &normals(rows * rank, &mut rng));
            let v = DMatrix::from_column_slice(cols, rank, &normals(cols * rank, &mut rng));
            let truth = &u * v.transpose();
            let mut entries = Vec::new();
            for c in 0..cols {
                for r in 0..rows {
                    if rng.random::<f64>() < observed {
                        entries.push((r, c));
                    }
                }
            }
            let eps = normals(entries.len(), &mut rng);
            let values: Vec<f64> = entries
                .iter()
                .zip(&eps)
                .map(|(&(r, c), e)| truth[(r, c)] + noise * e)
                .collect();
            let mut built = matcomp_problem(spec, rows, cols, &entries, values.clone())?;
            built.meta.x_true = Some(truth.as_slice().to_vec());
            built.meta.noise_hash = Some(hash_bits(&eps));
            built.raw = RawData::Entries {
                rows,
                cols,
                entries,
                values,
            };
            Ok(built)
        }
        Family::Imrestore => build_imrestore_spec(spec, Path::new(".")),
    }
}

/// `[0..s₀), [s₀..s₀+s₁), …`
pub fn contiguous_blocks(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&s| {
            let blk = (start..start + s).collect();
            start += s;
            blk
        })
        .collect()
}

/// `½ Σ_{(i,j)∈Ω} (X_ij − M_ij)² + λ‖X‖_*` over column-major `rows×cols` matrices.
/// The sampling operator is a coordinate projection, so `L_f = 1` exactly.
pub fn matcomp_problem(
    spec: &ProblemSpec,
    rows: usize,
    cols: usize,
    entries: &[(usize, usize)],
    values: Vec<f64>,
) -> Result<BuiltProblem> {
    if entries.len() != values.len() {
        return Err(Error::dims("observed values", entries.len(), values.len()));
    }
    let mut indices = Vec::with_capacity(entries.len());
    for &(r, c) in entries {
        if r >= rows || c >= cols {
            return Err(Error::param(format!("observed entry ({r}, {c}) outside {rows}x{cols}")));
        }
        indices.push(c * rows + r);
    }
    let mut sorted = indices.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::param("observed entries contain duplicates"));
    }
    let op = Arc::new(LinearOperator::entry_selection(rows * cols, indices)?);
    let grad0 = op.apply_adjoint(&values)?;
    let lmax = lambda_max_nuclear(&grad0, rows, cols)?;
    let lambda = resolve_lambda(spec, DEFAULT_FRACTION, Some(lmax))?;
    let f = quadratic_loss(op, values)?.with_lipschitz(1.0);
    let g = Arc::new(NuclearNorm::new(lambda, rows, cols, spec.svd)?);
    let (problem, mut meta) = assemble(spec, f, g, lambda, Some(lmax))?;
    meta.matrix_shape = Some((rows, cols));
    Ok(BuiltProblem {
        problem,
        meta,
        raw: RawData::External,
    })
}

fn required<'a>(spec: &'a ProblemSpec, field: &'a Option<String>, key: &str) -> Result<&'a str> {
    field
        .as_deref()
        .ok_or_else(|| Error::param(format!("{} from files needs '{key}'", spec.family)))
}

fn load_matrix(path: &Path, format: Option<DataFormat>) -> Result<LinearOperator> {
    let format = format
        .or_else(|| DataFormat::from_extension(path))
        .ok_or_else(|| Error::param(format!("cannot infer the format of {}", path.display())))?;
    match format {
        DataFormat::MatrixMarket => io::read_matrix_market(path)?.to_operator(),
        DataFormat::Csv => io::read_csv(path)?.to_operator(),
        DataFormat::Libsvm => Ok(LinearOperator::sparse(io::read_libsvm(path, None)?.matrix)),
        DataFormat::Pgm => Err(Error::param("a PGM file is not a data matrix")),
    }
}

fn load_vector(path: &Path) -> Result<Vec<f64>> {
    io::read_csv(path)?.to_vector(path)
}

fn build_from_files(spec: &ProblemSpec, base: &Path) -> Result<BuiltProblem> {
    match spec.family {
        Family::Lasso | Family::GroupLasso => {
            let op = Arc::new(load_matrix(
                &io::resolve(base, required(spec, &spec.matrix, "matrix")?),
                spec.format,
            )?);
            let b = load_vector(&io::resolve(base, required(spec, &spec.rhs, "rhs")?))?;
            check_len("right-hand side", op.output_dim(), &b)?;
            let n = op.input_dim();
            if spec.family == Family::Lasso {
                let lmax = lambda_max(Family::Lasso, &op, &b, None)?;
                let lambda = resolve_lambda(spec, DEFAULT_FRACTION, Some(lmax))?;
                let f = quadratic_loss(op, b)?;
                let (problem, meta) = assemble(spec, f, Arc::new(L1Norm::new(lambda, n)?), lambda, Some(lmax))?;
                return Ok(BuiltProblem {
                    problem,
                    meta,
                    raw: RawData::External,
                });
            }
            let size = positive("block_size", spec.block_size.unwrap_or(10))?;
            if n % size != 0 {
                return Err(Error::param(format!("{n} columns are not a multiple of block_size {size}")));
            }
            let sizes = vec![size; n / size];
            let lmax = lambda_max(Family::GroupLasso, &op, &b, Some(&contiguous_blocks(&sizes)))?;
            let lambda = resolve_lambda(spec, DEFAULT_FRACTION, Some(lmax))?;
            let f = quadratic_loss(op, b)?;
            let g = Arc::new(GroupL2::contiguous(lambda, &sizes)?);
            let (problem, mut meta) = assemble(spec, f, g, lambda, Some(lmax))?;
            meta.block_sizes = Some(sizes);
            Ok(BuiltProblem {
                problem,
                meta,
                raw: RawData::External,
            })
        }
        Family::Logreg => {
            let path = io::resolve(base, required(spec, &spec.data, "data")?);
            let data = io::read_libsvm(&path, spec.n)?;
            // Any positive label is the positive class.
            let labels: Vec<f64> = data
                .labels
                .iter()
                .map(|&l| if l > 0.0 { 1.0 } else { -1.0 })
                .collect();
            let n = data.matrix.cols();
            let op = Arc::new(LinearOperator::sparse(data.matrix));
            let lmax = lambda_max(Family::Logreg, &op, &labels, None)?;
            let lambda = resolve_lambda(spec, DEFAULT_FRACTION, Some(lmax))?;
            let f = logistic_loss(op, labels)?;
            let (problem, meta) = assemble(spec, f, Arc::new(L1Norm::new(lambda, n)?), lambda, Some(lmax))?;
            Ok(BuiltProblem {
                problem,
                meta,
                raw: RawData::External,
            })
        }
        Family::Matcomp => {
            let path = io::resolve(base, required(spec, &spec.entries, "entries")?);
            let mm = io::read_matrix_market(&path)?;
            let entries: Vec<(usize, usize)> = mm.entries.iter().map(|&(r, c, _)| (r, c)).collect();
            let values = mm.entries.iter().map(|e| e.2).collect();
            matcomp_problem(spec, mm.rows, mm.cols, &entries, values)
        }
        Family::Imrestore => build_imrestore_spec(spec, base),
    }
}

/// Writes the data files, a file-based `spec.txt` with the resolved λ, and `metadata.json`.
pub fn write_instance(dir: &Path, built: &BuiltProblem) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let meta = &built.meta;
    let mut spec = ProblemSpec::new(meta.family);
    spec.seed = meta.spec.seed;
    spec.lambda = Some(LambdaSpec::Absolute(meta.lambda));
    spec.svd = meta.spec.svd;
    let mut written = Vec::new();
    match &built.raw {
        RawData::Dense { rows, cols, a, b } => {
            if meta.family == Family::Logreg {
                let mut out = String::new();
                for (r, label) in b.iter().enumerate() {
                    let _ = write!(out, "{}", if *label > 0.0 { "+1" } else { "-1" });
                    for c in 0..*cols {
                        let v = a[r * cols + c];
                        if v != 0.0 {
                            let _ = write!(out, " {}:{v:?}", c + 1);
                        }
                    }
                    out.push('\n');
                }
                let path = dir.join("data.svm");
                std::fs::write(&path, out).map_err(|source| Error::Io { path: path.clone(), source })?;
                written.push(path);
                spec.data = Some("data.svm".into());
                spec.n = Some(*cols);
            } else {
                io::write_csv(&dir.join("matrix.csv"), *rows, *cols, a)?;
                io::write_vector(&dir.join("rhs.csv"), b)?;
                written.extend([dir.join("matrix.csv"), dir.join("rhs.csv")]);
                spec.matrix = Some("matrix.csv".into());
                spec.rhs = Some("rhs.csv".into());
                if let Some(sizes) = &meta.block_sizes {
                    spec.block_size = sizes.first().copied();
                }
            }
        }
        RawData::Entries {
            rows,
            cols,
            entries,
            values,
        } => {
            let mm = io::MatrixMarket {
                rows: *rows,
                cols: *cols,
                entries: entries.iter().zip(values).map(|(&(r, c), &v)| (r, c, v)).collect(),
            };
            io::write_matrix_market(&dir.join("entries.mtx"), &mm)?;
            written.push(dir.join("entries.mtx"));
            spec.entries = Some("entries.mtx".into());
        }
        RawData::Images { clean, observed } => {
            io::write_pgm(&dir.join("clean.pgm"), clean)?;
            io::write_pgm(&dir.join("observed.pgm"), observed)?;
            written.extend([dir.join("clean.pgm"), dir.join("observed.pgm")]);
            // The observation is regenerated from the clean image and the seed.
            spec = meta.spec.clone();
            spec.image = Some("clean.pgm".into());
            spec.lambda = Some(LambdaSpec::Absolute(meta.lambda));
        }
        RawData::External => {}
    }
    let spec_path = dir.join("spec.txt");
    std::fs::write(&spec_path, spec.to_text()).map_err(|source| Error::Io {
        path: spec_path.clone(),
        source,
    })?;
    written.push(spec_path);
    let meta_path = dir.join("metadata.json");
    let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    std::fs::write(&meta_path, json).map_err(|source| Error::Io {
        path: meta_path.clone(),
        source,
    })?;
    written.push(meta_path);
    Ok(written)
}

/// Half-sample symmetric reflection into `[0, n)`.
fn reflect(mut k: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    k = k.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Normalized `size×size` Gaussian kernel, row-major.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size.is_multiple_of(2) {
        return Err(Error::param(format!("blur size {size} must be odd")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("blur σ = {sigma} must be positive")));
    }
    let h = (size / 2) as f64;
    let mut k = Vec::with_capacity(size * size);
    for p in 0..size {
        for q in 0..size {
            let (dp, dq) = (p as f64 - h, q as f64 - h);
            k.push((-(dp * dp + dq * dq) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Gaussian blur on column-major `rows×cols` images with reflective boundary.
pub fn gaussian_blur(rows: usize, cols: usize, size: usize, sigma: f64) -> Result<LinearOperator> {
    let kernel = gaussian_kernel(size, sigma)?;
    let h = (size / 2) as isize;
    let mut triplets = Vec::with_capacity(rows * cols * size * size);
    for c in 0..cols {
        for r in 0..rows {
            let out = c * rows + r;
            for p in -h..=h {
                for q in -h..=h {
                    let w = kernel[((p + h) as usize) * size + (q + h) as usize];
                    let rr = reflect(r as isize + p, rows);
                    let cc = reflect(c as isize + q, cols);
                    triplets.push((out, cc * rows + rr, w));
                }
            }
        }
    }
    Ok(LinearOperator::sparse(CsrMatrix::from_triplets(rows * cols, rows * cols, triplets)?))
}

/// Piecewise-constant test image with values in `[0, 1]`: an ellipse, a bar and a disk
/// on a dim background.
pub fn phantom(rows: usize, cols: usize) -> Image {
    let mut data = vec![0.0; rows * cols];
    for c in 0..cols {
        for r in 0..rows {
            let y = (r as f64 + 0.5) / rows as f64 - 0.5;
            let x = (c as f64 + 0.5) / cols as f64 - 0.5;
            let mut v = 0.1;
            if (x / 0.42).powi(2) + (y / 0.36).powi(2) <= 1.0 {
                v = 0.5;
            }
            if x.abs() <= 0.08 && y.abs() <= 0.25 {
                v = 0.9;
            }
            if (x - 0.2).powi(2) + (y + 0.12).powi(2) <= 0.01 {
                v = 0.2;
            }
            data[c * rows + r] = v;
        }
    }
    Image { rows, cols, data }
}

/// `Σ log(1 + ((Ax − b)_i)²) + λ‖Wx‖₁` with `A` a Gaussian blur and `W` the orthonormal
/// Haar transform; `b` is the blurred image plus `noise_sigma`·N(0, 1).
pub fn build_imrestore(
    image: &Image,
    blur_size: usize,
    blur_sigma: f64,
    noise_sigma: f64,
    lambda: f64,
    seed: u64,
) -> Result<BuiltProblem> {
    let mut spec = ProblemSpec::new(Family::Imrestore);
    spec.seed = seed;
    spec.noise = Some(noise_sigma);
    spec.blur_size = Some(blur_size);
    spec.blur_sigma = Some(blur_sigma);
    spec.lambda = Some(LambdaSpec::Absolute(lambda));
    imrestore_with(&spec, image)
}

fn imrestore_with(spec: &ProblemSpec, image: &Image) -> Result<BuiltProblem> {
    let block = 1usize << HAAR_LEVELS;
    if !image.rows.is_multiple_of(block) || !image.cols.is_multiple_of(block) || image.rows == 0 || image.cols == 0 {
        return Err(Error::param(format!(
            "image {}x{} is not divisible by {block}",
            image.rows, image.cols
        )));
    }
    let noise = spec.noise.unwrap_or(1e-3);
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::param(format!("noise = {noise} must be nonnegative")));
    }
    let (rows, cols) = (image.rows, image.cols);
    let blur = Arc::new(gaussian_blur(
        rows,
        cols,
        spec.blur_size.unwrap_or(9),
        spec.blur_sigma.unwrap_or(4.0),
    )?);
    let w = Arc::new(LinearOperator::haar2d(rows, cols, HAAR_LEVELS)?);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let eps = normals(rows * cols, &mut rng);
    let b: Vec<f64> = blur
        .apply(&image.data)?
        .iter()
        .zip(&eps)
        .map(|(c, e)| c + noise * e)
        .collect();
    let f = robust_loss(blur, b.clone())?;
    let lmax = lambda_max_analysis(&f.eval_fg(&vec![0.0; rows * cols])?.1, &w)?;
    let lambda = resolve_lambda(spec, LambdaSpec::Absolute(1e-4), Some(lmax))?;
    let g = Arc::new(OrthogonalCompose::new(L1Norm::new(lambda, rows * cols)?, w)?);
    let (problem, mut meta) = assemble(spec, f, g, lambda, Some(lmax))?;
    problem.reset();
    meta.x_true = Some(image.data.clone());
    meta.noise_hash = Some(hash_bits(&eps));
    meta.matrix_shape = Some((rows, cols));
    Ok(BuiltProblem {
        problem,
        meta,
        raw: RawData::Images {
            clean: image.clone(),
            observed: Image { rows, cols, data: b },
        },
    })
}

fn build_imrestore_spec(spec: &ProblemSpec, base: &Path) -> Result<BuiltProblem> {
    let image = match spec.image.as_deref().unwrap_or("phantom") {
        "phantom" => {
            let side = spec.image_size.unwrap_or(32);
            phantom(side, side)
        }
        file => io::read_pgm(&io::resolve(base, file))?,
    };
    imrestore_with(spec, &image)
}
