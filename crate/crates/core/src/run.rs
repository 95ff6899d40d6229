//! Reproducible runs behind the command-line subcommands: resolve a
//! configuration, load or generate data, and write every artifact under one
//! output directory.
//!
//! Settings are resolved as flags over config file over defaults, and the
//! resolved configuration is written next to the outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::synth::{gen_rotated_glyph_with, gen_synthetic_ordinal, GlyphStyle, OrdinalGenerator};
use crate::data::{load_dataset, write_dataset, MultiViewDataset, Split};
use crate::error::{Result, VgpError};
use crate::metrics::MetricReport;
use crate::model::FittedModel;
use crate::ordinal::LabelMatrix;
use crate::sampling::McConfig;
use crate::trainer::{grad_check, train, GradCheckConfig, GradCheckReport, InitSpec, LatentInit, ModelState, Objective, TrainConfig, TrainingTrace};

/// Which synthetic generator `generate` runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    #[default]
    Ordinal,
    Glyph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub kind: GeneratorKind,
    pub n: usize,
    pub n_test: usize,
    pub latent_dim: usize,
    pub outputs: usize,
    pub levels: usize,
    pub separation: f64,
    pub noise: f64,
    pub steps: usize,
    pub image_side: usize,
    /// Horizontal shift of the glyph off the rotation centre.
    pub glyph_offset: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::Ordinal,
            n: 500,
            n_test: 100,
            latent_dim: 2,
            outputs: 2,
            levels: 3,
            separation: 20.0,
            noise: 0.05,
            steps: 360,
            image_side: 28,
            glyph_offset: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSettings {
    /// Rows of the default random instance (ignored with a manifest).
    pub n: usize,
    pub mc_samples: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            n: 16,
            mc_samples: 2,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Expected number of ordinal levels; checked against the manifest.
    pub levels: Option<usize>,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub gradcheck: GradCheckSettings,
}

/// Values given on the command line; `None` leaves the file/default value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub mc_samples: Option<usize>,
    pub latent_dim: Option<usize>,
    pub ordinal_weight: Option<f64>,
    pub levels: Option<usize>,
}

impl RunConfig {
    /// Reads a JSON (`.json`) or TOML (anything else) config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VgpError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| VgpError::Config(format!("{}: {e}", path.display())))
    }

    /// Config file (if any) with the overrides applied on top.
    pub fn resolve(config_file: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match config_file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if o.manifest.is_some() {
            cfg.manifest = o.manifest.clone();
        }
        if o.checkpoint.is_some() {
            cfg.checkpoint = o.checkpoint.clone();
        }
        if o.out.is_some() {
            cfg.out = o.out.clone();
        }
        if let Some(s) = o.seed {
            cfg.train.seed = s;
        }
        if let Some(b) = o.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(e) = o.epochs {
            cfg.train.epochs = e;
        }
        if let Some(m) = o.mc_samples {
            cfg.train.mc_samples = m;
            cfg.gradcheck.mc_samples = m;
        }
        if let Some(q) = o.latent_dim {
            cfg.train.latent_dim = q;
            cfg.generate.latent_dim = q;
        }
        if let Some(w) = o.ordinal_weight {
            cfg.train.ordinal_weight = w;
        }
        if let Some(s) = o.levels {
            cfg.levels = Some(s);
            cfg.generate.levels = s;
        }
        Ok(cfg)
    }

    fn require<'a>(field: &'a Option<PathBuf>, name: &str, cmd: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| VgpError::Config(format!("{cmd} needs --{name}")))
    }

    fn out_dir(&self, cmd: &str) -> Result<&Path> {
        let out = Self::require(&self.out, "out", cmd)?;
        std::fs::create_dir_all(out).map_err(|e| VgpError::io(out, e))?;
        Ok(out)
    }

    /// Writes the resolved configuration as `config.json` under `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.json");
        let s = serde_json::to_string_pretty(self).map_err(|e| VgpError::Json {
            path: path.clone(),
            source: e,
        })?;
        std::fs::write(&path, s).map_err(|e| VgpError::io(&path, e))
    }

    fn load_data(&self, cmd: &str) -> Result<MultiViewDataset> {
        let ds = load_dataset(Self::require(&self.manifest, "manifest", cmd)?)?;
        if let Some(s) = self.levels {
            if ds.labels.is_some() && s != ds.levels {
                return Err(VgpError::Config(format!("--levels {s} but the manifest declares {} levels", ds.levels)));
            }
        }
        Ok(ds)
    }
}

/// Paths written by [`cmd_train`].
#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
    pub latents: PathBuf,
    pub model: FittedModel,
    pub trace_data: TrainingTrace,
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| VgpError::io(path, e))
}

/// `row,split,mean_0..,var_0..` for every dataset row: training rows at
/// their cavity posterior, test rows at their encoder projection.
pub fn latent_dump(model: &FittedModel, ds: &MultiViewDataset) -> Result<String> {
    let q = model.state.latent_dim();
    let mut out = String::from("row,split");
    for d in 0..q {
        let _ = write!(out, ",mean_{d}");
    }
    for d in 0..q {
        let _ = write!(out, ",var_{d}");
    }
    out.push('\n');
    let cav = model.train_cavity()?;
    let train_rows = ds.rows_in(Split::Train);
    let test_rows = ds.rows_in(Split::Test);
    let proj = if test_rows.is_empty() {
        None
    } else {
        Some(model.project(&ds.subset(&test_rows).views)?)
    };
    let mut lines: Vec<(usize, String)> = Vec::with_capacity(ds.len());
    for (k, &i) in train_rows.iter().enumerate() {
        let mut l = format!("{i},train");
        for d in 0..q {
            let _ = write!(l, ",{}", cav.means[(k, d)]);
        }
        for d in 0..q {
            let v = model.state.variational.log_vars[(k, d)].exp() + cav.variances[k];
            let _ = write!(l, ",{v}");
        }
        lines.push((i, l));
    }
    if let Some(p) = &proj {
        for (k, &i) in test_rows.iter().enumerate() {
            let mut l = format!("{i},test");
            for d in 0..q {
                let _ = write!(l, ",{}", p.means[(k, d)]);
            }
            for _ in 0..q {
                let _ = write!(l, ",{}", p.variances[k]);
            }
            lines.push((i, l));
        }
    }
    lines.sort_by_key(|(i, _)| *i);
    for (_, l) in lines {
        out.push_str(&l);
        out.push('\n');
    }
    Ok(out)
}

/// Trains on the manifest's training split; writes `checkpoint.json`,
/// `trace.csv`, `latents.csv` and `config.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    let ds = cfg.load_data("train")?;
    let out = cfg.out_dir("train")?;
    cfg.echo(out)?;
    let mut tc = cfg.train.clone();
    tc.trace_path = None;
    let outcome = train(&ds, &tc)?;
    let checkpoint = out.join("checkpoint.json");
    let trace = out.join("trace.csv");
    let latents = out.join("latents.csv");
    outcome.model.save(&checkpoint)?;
    outcome.trace.write_csv(&trace)?;
    write_text(&latents, &latent_dump(&outcome.model, &ds)?)?;
    Ok(TrainArtifacts {
        checkpoint,
        trace,
        latents,
        model: outcome.model,
        trace_data: outcome.trace,
    })
}

/// Rows evaluated by `evaluate`: the test split, or every row when the
/// manifest has no test rows.
pub fn evaluation_rows(ds: &MultiViewDataset) -> Vec<usize> {
    let test = ds.rows_in(Split::Test);
    if test.is_empty() {
        (0..ds.len()).collect()
    } else {
        test
    }
}

/// Scores a checkpoint; writes `metrics.json`, `metrics.csv` and, with a
/// classifier, `predictions.csv`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<MetricReport> {
    let model = FittedModel::load(RunConfig::require(&cfg.checkpoint, "checkpoint", "evaluate")?)?;
    let ds = cfg.load_data("evaluate")?;
    model.check_compatible(&ds)?;
    let out = cfg.out_dir("evaluate")?;
    cfg.echo(out)?;
    let rows = evaluation_rows(&ds);
    let sub = ds.subset(&rows);
    let report = model.evaluate(&sub)?;
    report.write_json(&out.join("metrics.json"))?;
    report.write_csv(&out.join("metrics.csv"))?;
    if model.state.ordinal.is_some() {
        let pred = model.predict_levels(&sub.views)?;
        let mut s = String::from("row");
        for c in 0..pred.outputs() {
            let name = ds.output_names.get(c).cloned().unwrap_or_else(|| format!("output_{c}"));
            let _ = write!(s, ",{name}");
        }
        s.push('\n');
        for (k, &i) in rows.iter().enumerate() {
            let _ = write!(s, "{i}");
            for c in 0..pred.outputs() {
                let _ = write!(s, ",{}", pred.level(k, c));
            }
            s.push('\n');
        }
        write_text(&out.join("predictions.csv"), &s)?;
    }
    Ok(report)
}

/// Projects every manifest row onto the latent space; writes
/// `projection.csv` (`row,mean_0..,var`).
pub fn cmd_project(cfg: &RunConfig) -> Result<PathBuf> {
    let model = FittedModel::load(RunConfig::require(&cfg.checkpoint, "checkpoint", "project")?)?;
    let ds = cfg.load_data("project")?;
    model.check_compatible(&ds)?;
    let out = cfg.out_dir("project")?;
    cfg.echo(out)?;
    let p = model.project(&ds.views)?;
    let mut s = String::from("row");
    for d in 0..p.means.ncols() {
        let _ = write!(s, ",mean_{d}");
    }
    s.push_str(",var\n");
    for i in 0..p.means.nrows() {
        let _ = write!(s, "{i}");
        for d in 0..p.means.ncols() {
            let _ = write!(s, ",{}", p.means[(i, d)]);
        }
        let _ = writeln!(s, ",{}", p.variances[i]);
    }
    let path = out.join("projection.csv");
    write_text(&path, &s)?;
    Ok(path)
}

/// Random instance for the gradient check: two views, two outputs with
/// three levels, a perturbed initial state.
pub fn gradcheck_problem(n: usize, latent_dim: usize, seed: u64) -> Result<(Vec<DMatrix<f64>>, LabelMatrix, ModelState)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let views = vec![
        DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0)),
        DMatrix::from_fn(n, 5, |_, _| rng.random_range(-1.0..1.0)),
    ];
    let cells = (0..n * 2).map(|_| Some(rng.random_range(1..=3))).collect();
    let labels = LabelMatrix::new(n, 2, 3, cells)?;
    let spec = InitSpec {
        latent_dim,
        ordinal_weight: 1.0,
        init: LatentInit::Random,
        reparam: Default::default(),
        seed,
    };
    let mut state = ModelState::init(&views, Some((2, 3)), &spec)?;
    let flat: Vec<f64> = state.to_flat().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    state.set_flat(&flat)?;
    Ok((views, labels, state))
}

/// Finite-difference check of the bound gradient, on the manifest's
/// training rows when one is given, else on [`gradcheck_problem`].
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradCheckReport> {
    let g = &cfg.gradcheck;
    let check = GradCheckConfig {
        step: g.step,
        tolerance: g.tolerance,
    };
    let mc = McConfig::new(g.mc_samples, cfg.train.seed)?;
    let report = match &cfg.manifest {
        Some(_) => {
            let ds = cfg.load_data("gradcheck")?.train();
            let views = if cfg.train.standardize {
                crate::data::Standardizer::fit(&ds.views).apply(&ds.views)?
            } else {
                ds.views.clone()
            };
            let outputs = ds.labels.as_ref().map(|l| (l.outputs(), l.levels()));
            let spec = InitSpec {
                latent_dim: cfg.train.latent_dim,
                ordinal_weight: if ds.labels.is_some() { cfg.train.ordinal_weight } else { 0.0 },
                init: cfg.train.init,
                reparam: cfg.train.reparam,
                seed: cfg.train.seed,
            };
            let state = ModelState::init(&views, outputs, &spec)?;
            let obj = Objective::new(&views, ds.labels.as_ref());
            let batch: Vec<usize> = (0..ds.len().min(cfg.train.batch_size)).collect();
            grad_check(&obj, &state, &batch, &mc, &check)?
        }
        None => {
            let (views, labels, state) = gradcheck_problem(g.n, cfg.train.latent_dim, cfg.train.seed)?;
            let obj = Objective::new(&views, Some(&labels));
            let batch: Vec<usize> = (0..g.n).collect();
            grad_check(&obj, &state, &batch, &mc, &check)?
        }
    };
    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out).map_err(|e| VgpError::io(out, e))?;
        cfg.echo(out)?;
        let path = out.join("gradcheck.json");
        let s = serde_json::to_string_pretty(&report).map_err(|e| VgpError::Json {
            path: path.clone(),
            source: e,
        })?;
        write_text(&path, &s)?;
    }
    Ok(report)
}

/// Runs a synthetic generator and writes its manifest and CSV files.
pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir("generate")?;
    let g = &cfg.generate;
    let ds = match g.kind {
        GeneratorKind::Ordinal => {
            let gen = OrdinalGenerator::new(g.n, g.latent_dim, g.outputs, g.levels, g.separation, g.noise, cfg.train.seed)
                .with_test(g.n_test);
            gen_synthetic_ordinal(&gen)?.dataset
        }
        GeneratorKind::Glyph => {
            let style = GlyphStyle {
                offset: g.glyph_offset,
                ..GlyphStyle::default()
            };
            gen_rotated_glyph_with(g.steps, g.image_side, cfg.train.seed, &style)?
        }
    };
    let manifest = write_dataset(out, &ds)?;
    cfg.echo(out)?;
    Ok(manifest)
}
