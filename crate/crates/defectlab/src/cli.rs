//! Command-line pipeline: preset field generation, defect extraction,
//! flat-norm decomposition, phase lifting, Monte-Carlo reports, and point /
//! polyline exporters. Every command emits a single payload (JSON unless an
//! export format says otherwise) to stdout or `--out`.
//!
//! Field files are a JSON header `{d, m, origin, spacing, counts, target?,
//! endianness?}` carrying the samples either inline (`values`, one flat
//! array in vertex-id order, `m` components per vertex) or as a sidecar raw
//! little-endian float64 blob (`blob`, path relative to the header file).
//! Serialization is bit-exact in both variants.
//!
//! Exit codes: 0 success, 2 input error, 3 unresolved degeneracy,
//! 4 solver cap exceeded.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::chain::{Chain, ChainData, ChainError};
use crate::coeff::{GroupElement, GroupError};
use crate::flatnorm::{flat_norm, relative_flat_norm, FlatNormError};
use crate::lifting::{cut_chain, lift_circle_field, witness_cut, LiftError};
use crate::mesh::{Complex, GridLayout, MeshError};
use crate::singular::{
    continuity_report, default_backend, jacobian_integral_check, mass_coarea_report,
    n_valued_stability, singular_set_with, Backend, SampledField, SingularChain, SingularError,
};
use crate::target::{self, TargetError, TargetManifold};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("unresolved degeneracy: {0}")]
    Degeneracy(String),
    #[error("solver cap exceeded: {0}")]
    SolverCap(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Degeneracy(_) => 3,
            CliError::SolverCap(_) => 4,
        }
    }
}

impl From<SingularError> for CliError {
    fn from(e: SingularError) -> Self {
        match e {
            SingularError::UnresolvedDegeneracy { .. } => CliError::Degeneracy(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<FlatNormError> for CliError {
    fn from(e: FlatNormError) -> Self {
        match e {
            FlatNormError::SizeCapExceeded(_) => CliError::SolverCap(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<LiftError> for CliError {
    fn from(e: LiftError) -> Self {
        match e {
            LiftError::Singular(inner) => inner.into(),
            LiftError::FlatNorm(inner) => inner.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<GroupError> for CliError {
    fn from(e: GroupError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TargetError> for CliError {
    fn from(e: TargetError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("json: {e}"))
    }
}

/// On-disk field format. `values` (inline) and `blob` (sidecar path) are
/// mutually exclusive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldFile {
    pub d: usize,
    pub m: usize,
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endianness: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob: Option<String>,
}

fn manifold_of_name(name: &str) -> Result<TargetManifold, CliError> {
    match name {
        "circle" => Ok(TargetManifold::Circle),
        "sphere3" => Ok(TargetManifold::Sphere(3)),
        "rp2q" => Ok(TargetManifold::Rp2q),
        other => Err(CliError::Input(format!(
            "unknown target {other:?}; expected circle, sphere3, or rp2q"
        ))),
    }
}

/// Load a field file (inline or blob variant) into a PL-interpolated field.
pub fn parse_field(path: &Path) -> Result<(SampledField, Option<TargetManifold>), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let file: FieldFile = serde_json::from_str(&text)?;
    if !matches!(file.d, 2 | 3) {
        return Err(CliError::Input(format!("unsupported domain dimension d={}", file.d)));
    }
    if !matches!(file.m, 2 | 3 | 5) {
        return Err(CliError::Input(format!("unsupported component count m={}", file.m)));
    }
    if file.counts.len() != file.d {
        return Err(CliError::Input(format!(
            "counts has {} entries for d={}",
            file.counts.len(),
            file.d
        )));
    }
    let layout = GridLayout::new(file.origin.clone(), file.spacing.clone(), file.counts.clone())?;
    let expected = file.m * layout.num_vertices();
    let flat: Vec<f64> = match (&file.values, &file.blob) {
        (Some(_), Some(_)) => {
            return Err(CliError::Input("field file has both inline values and a blob".into()))
        }
        (None, None) => {
            return Err(CliError::Input("field file has neither inline values nor a blob".into()))
        }
        (Some(v), None) => {
            if v.len() != expected {
                return Err(CliError::Input(format!(
                    "value count mismatch: expected {expected} samples, found {}",
                    v.len()
                )));
            }
            v.clone()
        }
        (None, Some(rel)) => {
            match file.endianness.as_deref() {
                None | Some("little") => {}
                Some(other) => {
                    return Err(CliError::Input(format!("unsupported endianness {other:?}")))
                }
            }
            let blob_path = path.parent().unwrap_or(Path::new(".")).join(rel);
            let bytes = fs::read(&blob_path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", blob_path.display())))?;
            if bytes.len() != 8 * expected {
                return Err(CliError::Input(format!(
                    "blob size mismatch: expected {expected} samples ({} bytes), found {} bytes",
                    8 * expected,
                    bytes.len()
                )));
            }
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
    };
    if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
        return Err(CliError::Input(format!("non-finite sample at flat index {i}")));
    }
    let values: Vec<Vec<f64>> = flat.chunks_exact(file.m).map(|c| c.to_vec()).collect();
    let field = SampledField::from_values(layout, file.m, values)?;
    let target = file.target.as_deref().map(manifold_of_name).transpose()?;
    Ok((field, target))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Vortex,
    VortexPair,
    DegreeN,
    DisclinationHalf,
    #[value(name = "line-defect-3d")]
    LineDefect3d,
    Smooth,
}

/// Seeded defect locations shared by the planar presets.
pub const VORTEX_CENTER: [f64; 2] = [0.016, 0.017];
pub const PAIR_CENTERS: [[f64; 2]; 2] = [[-0.37, 0.016], [0.43, 0.017]];
pub const HALF_CHARGE_CENTERS: [[f64; 2]; 2] = [[-0.47, 0.016], [0.53, 0.017]];

/// Build a preset field; grid flags fall back to a `[-1,1]^d` box at the
/// preset's default resolution (64² planar, 16³ spatial).
pub fn preset_field(
    preset: Preset,
    degree: i32,
    counts: Option<Vec<usize>>,
    origin: Option<Vec<f64>>,
    spacing: Option<Vec<f64>>,
) -> Result<(SampledField, TargetManifold), CliError> {
    let d = if preset == Preset::LineDefect3d { 3 } else { 2 };
    let counts = counts.unwrap_or_else(|| {
        if preset == Preset::LineDefect3d {
            vec![16; 3]
        } else {
            vec![64; 2]
        }
    });
    if counts.len() != d {
        return Err(CliError::Input(format!(
            "preset needs {d} grid counts, got {}",
            counts.len()
        )));
    }
    let origin = origin.unwrap_or_else(|| vec![-1.0; d]);
    let spacing =
        spacing.unwrap_or_else(|| counts.iter().map(|&n| 2.0 / n as f64).collect());
    let layout = GridLayout::new(origin, spacing, counts)?;
    let unit_radial = |w: [f64; 2]| {
        let r = (w[0] * w[0] + w[1] * w[1]).sqrt();
        vec![w[0] / r, w[1] / r]
    };
    let (field, t) = match preset {
        Preset::Vortex => (
            SampledField::from_fn(layout, 2, |x| {
                unit_radial([x[0] - VORTEX_CENTER[0], x[1] - VORTEX_CENTER[1]])
            })?,
            TargetManifold::Circle,
        ),
        Preset::DegreeN => (
            SampledField::from_fn(layout, 2, |x| {
                let th = (x[1] - VORTEX_CENTER[1]).atan2(x[0] - VORTEX_CENTER[0]);
                let n = degree as f64;
                vec![(n * th).cos(), (n * th).sin()]
            })?,
            TargetManifold::Circle,
        ),
        Preset::VortexPair => (
            SampledField::from_fn(layout, 2, |x| {
                let t1 = (x[1] - PAIR_CENTERS[0][1]).atan2(x[0] - PAIR_CENTERS[0][0]);
                let t2 = (x[1] - PAIR_CENTERS[1][1]).atan2(x[0] - PAIR_CENTERS[1][0]);
                vec![(t1 - t2).cos(), (t1 - t2).sin()]
            })?,
            TargetManifold::Circle,
        ),
        Preset::DisclinationHalf => (
            SampledField::from_fn(layout, 5, |x| {
                let t1 = (x[1] - HALF_CHARGE_CENTERS[0][1]).atan2(x[0] - HALF_CHARGE_CENTERS[0][0]);
                let t2 = (x[1] - HALF_CHARGE_CENTERS[1][1]).atan2(x[0] - HALF_CHARGE_CENTERS[1][0]);
                let phi = 0.5 * (t1 - t2);
                target::uniaxial_q(&nalgebra::Vector3::new(phi.cos(), phi.sin(), 0.0))
            })?,
            TargetManifold::Rp2q,
        ),
        Preset::LineDefect3d => (
            SampledField::from_fn(layout, 2, |x| {
                unit_radial([x[0] - VORTEX_CENTER[0], x[1] - VORTEX_CENTER[1]])
            })?,
            TargetManifold::Circle,
        ),
        Preset::Smooth => (
            SampledField::from_fn(layout, 2, |x| {
                let psi = 0.8
                    * (std::f64::consts::PI * x[0]).sin()
                    * (0.5 * std::f64::consts::PI * x[1]).cos();
                vec![psi.cos(), psi.sin()]
            })?,
            TargetManifold::Circle,
        ),
    };
    Ok((field, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetName {
    Circle,
    Sphere3,
    Rp2q,
}

impl TargetName {
    pub fn manifold(self) -> TargetManifold {
        match self {
            TargetName::Circle => TargetManifold::Circle,
            TargetName::Sphere3 => TargetManifold::Sphere(3),
            TargetName::Rp2q => TargetManifold::Rp2q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Link,
    Preimage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Json,
    Csv,
    Svg,
    Obj,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Mass,
    Continuity,
    Stability,
}

#[derive(Parser, Debug)]
#[command(
    name = "defectlab",
    version,
    about = "Defect chains from sampled vector fields: extraction, flat norm, lifting"
)]
pub struct Cli {
    /// Base seed for every Monte-Carlo draw; runs are deterministic given
    /// the seed (parallel draws use per-task streams).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Thread count for parallel y-ensembles.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write the payload to this file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a preset field file.
    Gen {
        #[arg(long, value_enum)]
        preset: Preset,
        /// Winding number for the degree-n preset.
        #[arg(long, default_value_t = 1)]
        degree: i32,
        /// Comma-separated cube counts per axis.
        #[arg(long)]
        counts: Option<String>,
        #[arg(long)]
        origin: Option<String>,
        #[arg(long)]
        spacing: Option<String>,
        /// Store samples as a raw little-endian float64 sidecar next to --out.
        #[arg(long)]
        blob: bool,
    },
    /// Extract the defect chain of a sampled field.
    Extract {
        #[arg(long)]
        field: PathBuf,
        /// Override the target named in the field file.
        #[arg(long, value_enum)]
        target: Option<TargetName>,
        /// Offset in the target's ambient space, comma-separated; drawn from
        /// --seed when omitted.
        #[arg(long)]
        y: Option<String>,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        /// Extract at this many seeded offsets in parallel and report
        /// cell-for-cell agreement.
        #[arg(long, default_value_t = 1)]
        draws: usize,
        #[arg(long, value_enum, default_value_t = ExportFormat::Json)]
        format: ExportFormat,
    },
    /// Flat-norm decomposition of a chain file over a complex file.
    Flatnorm {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        complex: PathBuf,
        /// JSON map dim -> [cell ids] listing the cells inside the window U;
        /// dimensions not listed count as fully inside.
        #[arg(long)]
        relative_to: Option<PathBuf>,
    },
    /// Phase-unwrap a circle-valued planar field across a cut.
    Lift {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, value_enum)]
        target: Option<TargetName>,
        #[arg(long)]
        y: Option<String>,
        /// Mass-reduce the cut with the flat-norm P-search instead of using
        /// the raw homotopy witness.
        #[arg(long)]
        minimize_cut: bool,
    },
    /// Monte-Carlo check of the degree-integral identity.
    CheckJacobian {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, value_enum)]
        target: Option<TargetName>,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// Quantitative reports: mass/coarea, continuity, N-valued stability.
    Report {
        #[arg(value_enum)]
        kind: ReportKind,
        #[arg(long)]
        field: PathBuf,
        /// Second field for the continuity report.
        #[arg(long)]
        against: Option<PathBuf>,
        #[arg(long, value_enum)]
        target: Option<TargetName>,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Input(format!("bad number {p:?}: {e}")))
        })
        .collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Input(format!("bad count {p:?}: {e}")))
        })
        .collect()
}

/// Uniform draw from the ambient ball of the given radius, split off the
/// base seed by stream index.
fn draw_offset(seed: u64, stream: u64, m: usize, radius: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut g = Vec::with_capacity(m + 1);
    while g.len() < m {
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        g.push(r * (std::f64::consts::TAU * u2).cos());
        g.push(r * (std::f64::consts::TAU * u2).sin());
    }
    g.truncate(m);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let scale = radius * rng.gen::<f64>().powf(1.0 / m as f64) / norm;
    g.iter().map(|v| v * scale).collect()
}

fn offset_radius(u: &SampledField) -> f64 {
    0.3 * u.lambda().max(0.01)
}

fn resolve_target(
    flag: Option<TargetName>,
    header: Option<TargetManifold>,
) -> Result<TargetManifold, CliError> {
    flag.map(TargetName::manifold).or(header).ok_or_else(|| {
        CliError::Input("no target: pass --target or name one in the field file".into())
    })
}

fn render_coeff(g: &GroupElement) -> String {
    if g.free.len() == 1 && g.torsion.is_empty() {
        format!("{:+}", g.free[0])
    } else if g.free.is_empty() && g.torsion.len() == 1 {
        g.torsion[0].to_string()
    } else {
        serde_json::to_string(g).expect("group elements serialize")
    }
}

/// Render a defect chain for downstream tools: `json` round-trips, `csv`
/// lists one cell per row with centroid coordinates, `svg` overlays defect
/// points on the grid outline, `obj` emits point/polyline geometry.
pub fn export_defects(s: &SingularChain, format: ExportFormat) -> Result<String, CliError> {
    let dim = s.chain.dim();
    if dim > 1 {
        return Err(CliError::Input(format!(
            "defect export handles points and polylines, not {dim}-chains"
        )));
    }
    let cx = s.chain.complex().clone();
    match format {
        ExportFormat::Json => Ok(serde_json::to_string_pretty(s)?),
        ExportFormat::Csv => {
            let axes = ["x", "y", "z"];
            let mut out = format!(
                "dim,cell,{},coefficient\n",
                axes[..cx.ambient_dim()].join(",")
            );
            for (c, g) in s.chain.iter() {
                let centroid = cx.centroid(dim, c)?;
                let coords =
                    centroid.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",");
                out.push_str(&format!("{dim},{c},{coords},{}\n", render_coeff(g)));
            }
            Ok(out)
        }
        ExportFormat::Svg => {
            if cx.ambient_dim() != 2 {
                return Err(CliError::Input("svg export needs a planar chain".into()));
            }
            if dim != 0 {
                return Err(CliError::Input("svg export draws defect points".into()));
            }
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for v in 0..cx.num_vertices() as u32 {
                let x = cx.vertex(v);
                for a in 0..2 {
                    lo[a] = lo[a].min(x[a]);
                    hi[a] = hi[a].max(x[a]);
                }
            }
            let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
            let scale = 440.0 / span;
            let px = |x: f64| 20.0 + (x - lo[0]) * scale;
            let py = |y: f64| 20.0 + (hi[1] - y) * scale;
            let mut out = String::from(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\">\n",
            );
            out.push_str(&format!(
                "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#888\"/>\n",
                px(lo[0]),
                py(hi[1]),
                (hi[0] - lo[0]) * scale,
                (hi[1] - lo[1]) * scale
            ));
            for (c, g) in s.chain.iter() {
                let x = cx.centroid(0, c)?;
                let label = render_coeff(g);
                let fill = if label.starts_with('-') { "#1f6fd0" } else { "#d03f1f" };
                out.push_str(&format!(
                    "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"{fill}\"/>\n",
                    px(x[0]),
                    py(x[1])
                ));
                out.push_str(&format!(
                    "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{label}</text>\n",
                    px(x[0]) + 7.0,
                    py(x[1]) - 7.0
                ));
            }
            out.push_str("</svg>\n");
            Ok(out)
        }
        ExportFormat::Obj => {
            if cx.ambient_dim() > 3 {
                return Err(CliError::Input("obj export needs at most 3 coordinates".into()));
            }
            let mut index: HashMap<u32, usize> = HashMap::new();
            let mut verts: Vec<u32> = vec![];
            for (c, _) in s.chain.iter() {
                for &v in cx.cell_tuple(dim, c)? {
                    index.entry(v).or_insert_with(|| {
                        verts.push(v);
                        verts.len()
                    });
                }
            }
            let mut out = String::new();
            for &v in &verts {
                let x = cx.vertex(v);
                let mut c = [0.0; 3];
                c[..x.len()].copy_from_slice(x);
                out.push_str(&format!("v {} {} {}\n", c[0], c[1], c[2]));
            }
            for (c, g) in s.chain.iter() {
                let tuple = cx.cell_tuple(dim, c)?;
                let ids =
                    tuple.iter().map(|v| index[v].to_string()).collect::<Vec<_>>().join(" ");
                let kind = if dim == 0 { "p" } else { "l" };
                out.push_str(&format!("{kind} {ids} # {}\n", render_coeff(g)));
            }
            Ok(out)
        }
    }
}

fn chains_agree(a: &SingularChain, b: &SingularChain) -> bool {
    a.chain.dim() == b.chain.dim()
        && a.chain.num_cells() == b.chain.num_cells()
        && a.chain
            .iter()
            .zip(b.chain.iter())
            .all(|((ca, ga), (cb, gb))| ca == cb && ga == gb)
}

fn gen_cmd(
    cli: &Cli,
    preset: Preset,
    degree: i32,
    counts: &Option<String>,
    origin: &Option<String>,
    spacing: &Option<String>,
    blob: bool,
) -> Result<String, CliError> {
    let counts = counts.as_deref().map(parse_usize_list).transpose()?;
    let origin = origin.as_deref().map(parse_f64_list).transpose()?;
    let spacing = spacing.as_deref().map(parse_f64_list).transpose()?;
    let (field, t) = preset_field(preset, degree, counts, origin, spacing)?;
    let layout = field.layout();
    let flat: Vec<f64> = field.vertex_values().iter().flatten().copied().collect();
    let mut file = FieldFile {
        d: layout.dim(),
        m: field.components(),
        origin: layout.origin.clone(),
        spacing: layout.spacing.clone(),
        counts: layout.counts.clone(),
        target: Some(t.name()),
        endianness: None,
        values: None,
        blob: None,
    };
    if blob {
        let out = cli.out.as_ref().ok_or_else(|| {
            CliError::Input("--blob needs --out to place the sidecar next to".into())
        })?;
        let sidecar = out.with_extension("f64");
        let mut bytes = Vec::with_capacity(flat.len() * 8);
        for v in &flat {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&sidecar, bytes)?;
        file.endianness = Some("little".into());
        file.blob = Some(
            sidecar
                .file_name()
                .expect("sidecar has a name")
                .to_string_lossy()
                .into_owned(),
        );
    } else {
        file.values = Some(flat);
    }
    Ok(serde_json::to_string_pretty(&file)?)
}

#[allow(clippy::too_many_arguments)]
fn extract_cmd(
    cli: &Cli,
    field: &Path,
    target: Option<TargetName>,
    y: &Option<String>,
    backend: Option<BackendArg>,
    draws: usize,
    format: ExportFormat,
) -> Result<String, CliError> {
    let (u, header_t) = parse_field(field)?;
    let t = resolve_target(target, header_t)?;
    let backend = match backend {
        Some(BackendArg::Link) => Backend::Link,
        Some(BackendArg::Preimage) => Backend::Preimage,
        None => default_backend(&u, &t)?,
    };
    if draws == 0 {
        return Err(CliError::Input("--draws must be at least 1".into()));
    }
    if draws == 1 {
        let offset = match y {
            Some(s) => parse_f64_list(s)?,
            None => draw_offset(cli.seed, 0, u.components(), offset_radius(&u)),
        };
        let s = singular_set_with(&u, &t, &offset, backend)?;
        return export_defects(&s, format);
    }
    if y.is_some() {
        return Err(CliError::Input("--y pins one offset; it conflicts with --draws".into()));
    }
    if format != ExportFormat::Json {
        return Err(CliError::Input("ensemble output is JSON only".into()));
    }
    let radius = offset_radius(&u);
    let runs: Vec<SingularChain> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let offset = draw_offset(cli.seed, i as u64, u.components(), radius);
            singular_set_with(&u, &t, &offset, backend).map_err(CliError::from)
        })
        .collect::<Result<_, _>>()?;
    let consistent = runs.iter().all(|r| chains_agree(r, &runs[0]));
    let payload = json!({
        "draws": draws,
        "consistent": consistent,
        "offsets": runs.iter().map(|r| r.offset.clone()).collect::<Vec<_>>(),
        "resamples": runs.iter().map(|r| r.resamples).collect::<Vec<_>>(),
        "chain": runs[0],
    });
    Ok(serde_json::to_string_pretty(&payload)?)
}

/// Accept either a bare chain file or an extraction payload wrapping one
/// under `"chain"`.
fn read_chain_data(path: &Path) -> Result<ChainData, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let node = if value.get("cells").is_some() {
        value
    } else if let Some(inner) = value.get("chain") {
        inner.clone()
    } else {
        return Err(CliError::Input(format!(
            "{} holds neither a chain nor an extraction payload",
            path.display()
        )));
    };
    Ok(serde_json::from_value(node)?)
}

fn flatnorm_cmd(
    chain: &Path,
    complex: &Path,
    relative_to: &Option<PathBuf>,
) -> Result<String, CliError> {
    let text = fs::read_to_string(complex)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", complex.display())))?;
    let cx: Complex = serde_json::from_str(&text)?;
    let s = Chain::from_data(Arc::new(cx), read_chain_data(chain)?)?;
    let fd = match relative_to {
        None => flat_norm(&s)?,
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            let raw: HashMap<String, Vec<u32>> = serde_json::from_str(&text)?;
            let mut window: HashMap<usize, HashSet<u32>> = HashMap::new();
            for (k, v) in raw {
                let dim = k
                    .parse::<usize>()
                    .map_err(|_| CliError::Input(format!("bad dimension key {k:?}")))?;
                window.insert(dim, v.into_iter().collect());
            }
            relative_flat_norm(&s, |dim, c| {
                window.get(&dim).map_or(true, |cells| cells.contains(&c))
            })?
        }
    };
    let payload = json!({
        "value": fd.value,
        "exactness": fd.exactness,
        "p": fd.p,
        "q": fd.q,
    });
    Ok(serde_json::to_string_pretty(&payload)?)
}

fn lift_cmd(
    cli: &Cli,
    field: &Path,
    target: Option<TargetName>,
    y: &Option<String>,
    minimize_cut: bool,
) -> Result<String, CliError> {
    let (u, header_t) = parse_field(field)?;
    let t = resolve_target(target, header_t)?;
    let offset = match y {
        Some(s) => parse_f64_list(s)?,
        None => draw_offset(cli.seed, 0, u.components(), offset_radius(&u)),
    };
    let s = singular_set_with(&u, &t, &offset, Backend::Link)?;
    let cut = if minimize_cut { cut_chain(&u, &t, &s)? } else { witness_cut(&u, &t, &s)? };
    let lifted = lift_circle_field(&u, &s, &cut.chain)?;
    let payload = json!({
        "offset": s.offset,
        "theta": lifted.theta,
        "cut": lifted.cut,
        "jumps": lifted.jumps,
        "variation_report": lifted.report,
        "cut_mass": cut.mass,
        "witness_mass": cut.witness_mass,
    });
    Ok(serde_json::to_string_pretty(&payload)?)
}

fn report_cmd(
    kind: ReportKind,
    field: &Path,
    against: &Option<PathBuf>,
    target: Option<TargetName>,
    samples: Option<usize>,
) -> Result<String, CliError> {
    let (u, header_t) = parse_field(field)?;
    let t = resolve_target(target, header_t)?;
    match kind {
        ReportKind::Mass => {
            let r = mass_coarea_report(&u, &t, samples.unwrap_or(600))?;
            Ok(serde_json::to_string_pretty(&r)?)
        }
        ReportKind::Continuity => {
            let path = against
                .as_ref()
                .ok_or_else(|| CliError::Input("continuity needs --against".into()))?;
            let (u1, _) = parse_field(path)?;
            if u1.layout() != u.layout() {
                return Err(CliError::Input("continuity fields must share a grid".into()));
            }
            let r = continuity_report(&u, &u1, &t, samples.unwrap_or(400))?;
            Ok(serde_json::to_string_pretty(&r)?)
        }
        ReportKind::Stability => {
            let r = n_valued_stability(&u, &t, samples.unwrap_or(100))?;
            Ok(serde_json::to_string_pretty(&r)?)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Gen { preset, degree, counts, origin, spacing, blob } => {
            gen_cmd(cli, *preset, *degree, counts, origin, spacing, *blob)
        }
        Command::Extract { field, target, y, backend, draws, format } => {
            extract_cmd(cli, field, *target, y, *backend, *draws, *format)
        }
        Command::Flatnorm { chain, complex, relative_to } => {
            flatnorm_cmd(chain, complex, relative_to)
        }
        Command::Lift { field, target, y, minimize_cut } => {
            lift_cmd(cli, field, *target, y, *minimize_cut)
        }
        Command::CheckJacobian { field, target, samples } => {
            let (u, header_t) = parse_field(field)?;
            let t = resolve_target(*target, header_t)?;
            let r = jacobian_integral_check(&u, &t, *samples)?;
            Ok(serde_json::to_string_pretty(&r)?)
        }
        Command::Report { kind, field, against, target, samples } => {
            report_cmd(*kind, field, against, *target, *samples)
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        // a second build_global in the same process is a no-op, not an error
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let payload = dispatch(&cli)?;
    match &cli.out {
        Some(path) => fs::write(path, payload + "\n")?,
        None => {
            use std::io::Write;
            // a closed pipe (e.g. `| head`) is not an error worth reporting
            if let Err(e) = writeln!(std::io::stdout(), "{payload}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

/// Parse arguments from the environment, run, and return the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("defectlab: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid_complex;
    use tempfile::tempdir;

    fn run_args(args: &[&str]) -> Result<(), CliError> {
        execute(Cli::try_parse_from(args).unwrap())
    }

    #[test]
    fn inline_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("vortex.json");
        run_args(&[
            "defectlab",
            "--out",
            out.to_str().unwrap(),
            "gen",
            "--preset",
            "vortex",
            "--counts",
            "16,16",
        ])
        .unwrap();
        let (parsed, t) = parse_field(&out).unwrap();
        assert_eq!(t.unwrap().name(), "circle");
        let (orig, _) = preset_field(Preset::Vortex, 1, Some(vec![16, 16]), None, None).unwrap();
        assert_eq!(parsed.layout(), orig.layout());
        for v in 0..parsed.layout().num_vertices() as u32 {
            // bit-exact: serde_json prints shortest-round-trip doubles
            assert_eq!(parsed.value(v), orig.value(v));
        }
    }

    #[test]
    fn blob_round_trip_and_truncation_error() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("pair.json");
        run_args(&[
            "defectlab",
            "--out",
            out.to_str().unwrap(),
            "gen",
            "--preset",
            "vortex-pair",
            "--counts",
            "12,12",
            "--blob",
        ])
        .unwrap();
        let (parsed, _) = parse_field(&out).unwrap();
        let (orig, _) =
            preset_field(Preset::VortexPair, 1, Some(vec![12, 12]), None, None).unwrap();
        for v in 0..parsed.layout().num_vertices() as u32 {
            assert_eq!(parsed.value(v), orig.value(v));
        }
        // truncate the sidecar: the error names expected vs found byte counts
        let sidecar = dir.path().join("pair.f64");
        let bytes = fs::read(&sidecar).unwrap();
        fs::write(&sidecar, &bytes[..bytes.len() - 16]).unwrap();
        let err = parse_field(&out).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&format!("{}", bytes.len())), "message names expected: {msg}");
        assert!(msg.contains(&format!("{}", bytes.len() - 16)), "message names found: {msg}");
    }

    #[test]
    fn constant_grid_parses_with_unit_bound() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("const.json");
        let file = FieldFile {
            d: 2,
            m: 2,
            origin: vec![0.0, 0.0],
            spacing: vec![0.5, 0.5],
            counts: vec![2, 2],
            target: Some("circle".into()),
            endianness: None,
            values: Some([1.0, 0.0].repeat(9)),
            blob: None,
        };
        fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let (field, _) = parse_field(&path).unwrap();
        assert_eq!(field.lambda(), 1.0);
    }

    #[test]
    fn malformed_headers_are_input_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let mut file = FieldFile {
            d: 2,
            m: 4,
            origin: vec![0.0, 0.0],
            spacing: vec![0.5, 0.5],
            counts: vec![2, 2],
            target: None,
            endianness: None,
            values: Some(vec![0.0; 36]),
            blob: None,
        };
        fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let err = parse_field(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("m=4"));

        file.m = 2;
        file.values = Some(vec![0.0; 7]);
        fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let err = parse_field(&path).unwrap_err();
        assert!(err.to_string().contains("expected 18"), "{err}");
        assert!(err.to_string().contains('7'), "{err}");

        // inline JSON cannot carry NaN (it serializes as null), so the
        // non-finite guard is exercised through the blob path
        let mut bytes = Vec::new();
        for i in 0..18 {
            let v = if i == 5 { f64::NAN } else { 0.0 };
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let blob = dir.path().join("bad.f64");
        fs::write(&blob, bytes).unwrap();
        file.values = None;
        file.blob = Some("bad.f64".into());
        file.endianness = Some("little".into());
        fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let err = parse_field(&path).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    #[test]
    fn extract_ensemble_is_seeded_and_consistent() {
        let dir = tempdir().unwrap();
        let field = dir.path().join("vortex.json");
        run_args(&[
            "defectlab",
            "--out",
            field.to_str().unwrap(),
            "gen",
            "--preset",
            "vortex",
            "--counts",
            "16,16",
        ])
        .unwrap();
        let run = |seed: &str, out: &Path| {
            run_args(&[
                "defectlab",
                "--seed",
                seed,
                "--out",
                out.to_str().unwrap(),
                "extract",
                "--field",
                field.to_str().unwrap(),
                "--backend",
                "link",
                "--draws",
                "5",
            ])
            .unwrap();
            fs::read_to_string(out).unwrap()
        };
        let a = run("7", &dir.path().join("a.json"));
        let b = run("7", &dir.path().join("b.json"));
        assert_eq!(a, b, "same seed, same output");
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["consistent"], serde_json::Value::Bool(true));
        assert_eq!(v["chain"]["chain"]["cells"].as_array().unwrap().len(), 1);
        let c = run("8", &dir.path().join("c.json"));
        let w: serde_json::Value = serde_json::from_str(&c).unwrap();
        assert_ne!(v["offsets"], w["offsets"], "different seed, different draws");
    }

    #[test]
    fn export_formats_cover_points_and_lines() {
        let (u, t) = preset_field(Preset::VortexPair, 1, Some(vec![16, 16]), None, None).unwrap();
        let s = singular_set_with(&u, &t, &[0.0, 0.0], Backend::Link).unwrap();
        assert_eq!(s.chain.num_cells(), 2);
        let csv = export_defects(&s, ExportFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("dim,cell,x,y,coefficient"));
        let svg = export_defects(&s, ExportFormat::Svg).unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains(">+1<") && svg.contains(">-1<"), "labels: {svg}");
        let js = export_defects(&s, ExportFormat::Json).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&js).unwrap();
        assert_eq!(parsed["chain"]["cells"].as_array().unwrap().len(), 2);

        let (u3, t3) =
            preset_field(Preset::LineDefect3d, 1, Some(vec![8, 8, 8]), None, None).unwrap();
        let s3 = singular_set_with(&u3, &t3, &[0.0, 0.0], Backend::Link).unwrap();
        assert!(s3.chain.num_cells() >= 8, "a line defect crosses every layer");
        let obj = export_defects(&s3, ExportFormat::Obj).unwrap();
        assert!(obj.starts_with("v ") && obj.contains("\nl "), "polyline obj: {obj}");
        assert!(matches!(
            export_defects(&s3, ExportFormat::Svg),
            Err(CliError::Input(_))
        ));

        // an empty chain still exports valid documents
        let (us, ts) = preset_field(Preset::Smooth, 1, Some(vec![8, 8]), None, None).unwrap();
        let empty = singular_set_with(&us, &ts, &[0.02, 0.01], Backend::Link).unwrap();
        assert!(empty.chain.is_zero());
        assert_eq!(export_defects(&empty, ExportFormat::Csv).unwrap().lines().count(), 1);
        assert!(export_defects(&empty, ExportFormat::Svg).unwrap().contains("</svg>"));
    }

    #[test]
    fn flatnorm_command_round_trips_files() {
        let dir = tempdir().unwrap();
        let layout = GridLayout::new(vec![0.0, 0.0], vec![0.25, 0.25], vec![4, 4]).unwrap();
        let cx = Arc::new(build_grid_complex(&layout).unwrap());
        let complex_path = dir.path().join("mesh.json");
        fs::write(&complex_path, serde_json::to_string(cx.as_ref()).unwrap()).unwrap();
        let group = crate::coeff::CoefficientGroup::integers();
        let chain = Chain::from_entries(
            cx.clone(),
            group.clone(),
            0,
            [(layout.vertex_id(&[2, 2]), group.scalar(1))],
        )
        .unwrap();
        let chain_path = dir.path().join("chain.json");
        fs::write(&chain_path, serde_json::to_string(&chain).unwrap()).unwrap();
        let out = dir.path().join("fn.json");
        run_args(&[
            "defectlab",
            "--out",
            out.to_str().unwrap(),
            "flatnorm",
            "--chain",
            chain_path.to_str().unwrap(),
            "--complex",
            complex_path.to_str().unwrap(),
        ])
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        // a unit point charge costs min(drop, route-out): positive and at
        // most the interior drop cost
        let value = v["value"].as_f64().unwrap();
        assert!(value > 0.0);
        let direct = flat_norm(&chain).unwrap();
        assert!((value - direct.value).abs() < 1e-12);
    }

    #[test]
    fn lift_command_reports_bounded_ratio() {
        let dir = tempdir().unwrap();
        let field = dir.path().join("pair.json");
        run_args(&[
            "defectlab",
            "--out",
            field.to_str().unwrap(),
            "gen",
            "--preset",
            "vortex-pair",
            "--counts",
            "16,16",
        ])
        .unwrap();
        let out = dir.path().join("lift.json");
        run_args(&[
            "defectlab",
            "--out",
            out.to_str().unwrap(),
            "lift",
            "--field",
            field.to_str().unwrap(),
            "--y",
            "0.05,0.02",
            "--minimize-cut",
        ])
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["theta"].as_array().unwrap().len(), 17 * 17);
        assert!(v["variation_report"]["ratio"].as_f64().unwrap() < 10.0);
        assert!(!v["jumps"].as_array().unwrap().is_empty());
        assert!(
            v["cut_mass"].as_f64().unwrap() <= v["witness_mass"].as_f64().unwrap() + 1e-12
        );
    }

    #[test]
    fn degree_preset_honors_the_flag() {
        let (u, t) = preset_field(Preset::DegreeN, 2, Some(vec![24, 24]), None, None).unwrap();
        let s = singular_set_with(&u, &t, &[0.01, -0.02], Backend::Link).unwrap();
        let total: i64 = s.chain.iter().map(|(_, g)| g.free[0]).sum();
        assert_eq!(total, 2, "total winding matches the requested degree");
    }
}
