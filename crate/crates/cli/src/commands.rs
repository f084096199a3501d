use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use gbdlab_core::compactness::{self, cauchy_check, convergence_check, energy_report, generate_all, generate_sequence, lsc_check};
use gbdlab_core::io::{self, Payload};
use gbdlab_core::korn::{pk_fit, pk_verify};
use gbdlab_core::partition_builder::build_partition;
use gbdlab_core::slicing::{self, slice_measure_report};
use gbdlab_core::suites::{label_agreement, suite_by_name, Suite};
use gbdlab_core::{
    Aabb, BuildOptions, BuildResult, CaccioppoliPartition, DisplacementField, EnergyMode, FitOptions, Vec3, CALIBRATED_C,
};

use crate::config::ExperimentConfig;
use crate::images;

const DEFAULT_N: usize = 128;
const DEFAULT_K: usize = 20;
const DEFAULT_LSC_SIGMAS: [f64; 5] = [2.0, 4.0, 8.0, 16.0, 32.0];
const DEFAULT_CAUCHY_SIGMAS: [f64; 2] = [1.0, 4.0];
const DEFAULT_SLICE_SIGMAS: [f64; 2] = [2.0, 4.0];

/// Inequalities found violated by a run that otherwise completed.
#[derive(Debug, Default)]
pub struct Outcome {
    pub violations: Vec<String>,
}

/// A resolved configuration and its output directory.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

fn sci(v: f64) -> String {
    format!("{v:.17e}")
}

impl Run {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
        Ok(Run { cfg, out })
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.out.join(name);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    }

    fn images(&self) -> bool {
        self.cfg.images.unwrap_or(true)
    }

    fn image_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn suite(&self) -> Result<Option<Suite>> {
        match &self.cfg.suite {
            Some(name) => Ok(Some(suite_by_name(name, self.cfg.n.unwrap_or(DEFAULT_N), self.cfg.k.unwrap_or(DEFAULT_K))?)),
            None => Ok(None),
        }
    }

    fn field(&self) -> Result<DisplacementField> {
        if let Some(p) = &self.cfg.field {
            return read_field(p);
        }
        if let Some(s) = self.suite()? {
            let k = self.cfg.step.unwrap_or(s.spec.k_len);
            return Ok(generate_sequence(&s.spec, k)?);
        }
        bail!("dependency error: no input field; set `field` or `suite`")
    }

    fn sequence(&self) -> Result<(Vec<DisplacementField>, Option<Suite>)> {
        if let Some(paths) = &self.cfg.sequence {
            let seq: Vec<DisplacementField> = paths.iter().map(|p| read_field(p)).collect::<Result<_>>()?;
            if seq.windows(2).any(|w| w[0].domain() != w[1].domain()) {
                bail!("usage error: key `sequence`: fields live on different grids");
            }
            return Ok((seq, None));
        }
        if let Some(s) = self.suite()? {
            return Ok((generate_all(&s.spec)?, Some(s)));
        }
        bail!("dependency error: no input sequence; set `sequence` or `suite`")
    }

    fn directions(&self, dim: usize) -> Vec<Vec3> {
        match self.cfg.directions {
            Some(n) => slicing::directions(dim, n),
            None => slicing::default_directions(dim),
        }
    }

    fn mode(&self, suite: Option<&Suite>) -> EnergyMode {
        let p = self.cfg.p.unwrap_or(2.0);
        match (self.cfg.mode.as_deref(), suite.map(|s| s.spec.mode)) {
            (Some("gsbd"), _) | (None, Some(EnergyMode::Gsbd { .. })) => EnergyMode::Gsbd { p },
            _ => EnergyMode::Gbd,
        }
    }

    fn build_options(&self, dim: usize) -> BuildOptions {
        let c = &self.cfg;
        BuildOptions {
            delta0: c.delta0,
            j_max: c.jmax,
            eta: c.eta,
            c: c.c.unwrap_or(CALIBRATED_C),
            tau_bound: c.tau_bound,
            tau_div: c.tau_div,
            directions: c.directions.map(|n| slicing::directions(dim, n)),
            fit: self.fit_options(),
            seed: c.seed.unwrap_or(0),
        }
    }

    fn fit_options(&self) -> FitOptions {
        let mut f = FitOptions::default();
        if let Some(b) = self.cfg.budget {
            f.budget = b;
        }
        f
    }

    fn partition_outputs(&self, built: &BuildResult, suite: Option<&Suite>) -> Result<()> {
        io::write_partition(self.create("partition.txt")?, &built.partition)?;
        built.report.write_pairs_csv(self.create("pairs.csv")?)?;
        built.report.write_classification_csv(self.create("classification.csv")?)?;
        let r = &built.report;
        let mut rows = vec![
            ("pieces", built.partition.piece_count().to_string()),
            ("perimeter", sci(built.partition.perimeter())),
            ("delta0", sci(r.delta0)),
            ("j_max", r.j_max.to_string()),
            ("eta", sci(r.eta)),
            ("c", sci(r.c)),
            ("tau_bound", sci(r.tau_bound)),
            ("tau_div", sci(r.tau_div)),
            ("classes", r.classes.len().to_string()),
            ("demoted", r.demoted.len().to_string()),
            ("reassigned_cells", r.reassigned_cells.to_string()),
            ("warnings", r.warnings.len().to_string()),
        ];
        if let Some(s) = suite {
            rows.push(("true_interface_area", sci(s.interface_area)));
            rows.push(("label_agreement", sci(label_agreement(built.partition.labels(), s.spec.partition.labels()))));
        }
        write_kv(self.create("partition_summary.csv")?, &rows)?;
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
        if self.images() {
            images::labels_image(&self.image_path("labels.pgm"), built.partition.domain(), built.partition.labels())?;
        }
        Ok(())
    }

    fn limit_field(&self, suite: Option<&Suite>) -> Result<Option<DisplacementField>> {
        if let Some(p) = &self.cfg.limit {
            return Ok(Some(read_field(p)?));
        }
        Ok(suite.map(|s| s.spec.base.clone()))
    }

    fn noise_bounds(&self, k_len: usize, suite: Option<&Suite>) -> Vec<f64> {
        (1..=k_len)
            .map(|k| match suite {
                Some(s) => s.spec.noise_bound(k),
                None => self.cfg.noise_amplitude.unwrap_or(0.0) / (k as f64).powf(self.cfg.noise_power.unwrap_or(1.0)),
            })
            .collect()
    }
}

fn read_field(p: &Path) -> Result<DisplacementField> {
    let f = File::open(p).map_err(|e| anyhow!("dependency error: cannot open field {}: {e}", p.display()))?;
    io::read_field(BufReader::new(f)).with_context(|| format!("reading field {}", p.display()))
}

fn read_partition(p: &Path) -> Result<CaccioppoliPartition> {
    let f = File::open(p).map_err(|e| anyhow!("dependency error: cannot open partition {}: {e}", p.display()))?;
    io::read_partition(BufReader::new(f)).with_context(|| format!("reading partition {}", p.display()))
}

fn write_kv<W: Write>(mut w: W, rows: &[(&str, String)]) -> Result<()> {
    writeln!(w, "key,value")?;
    for (k, v) in rows {
        writeln!(w, "{k},{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn slice_measure(cx: &Run) -> Result<Outcome> {
    let field = cx.field()?;
    let dirs = cx.directions(field.dim());
    let sigmas = cx.cfg.sigma.clone().unwrap_or_else(|| DEFAULT_SLICE_SIGMAS.to_vec());
    let report = slice_measure_report(&field, &dirs, &sigmas)?;
    let mut w = cx.create("slice_measure.csv")?;
    report.write_csv(&mut w)?;
    w.flush()?;
    if cx.images() {
        let m = slicing::mu_hat_cells(&field, &dirs)?;
        images::scalar_image(&cx.image_path("mu_hat.pgm"), field.domain(), &m.total)?;
    }
    Ok(Outcome::default())
}

pub fn pk_fit_cmd(cx: &Run) -> Result<Outcome> {
    let field = cx.field()?;
    let domain = field.domain();
    let dim = domain.dim();
    let cube = match (&cx.cfg.cube_min, &cx.cfg.cube_max) {
        (Some(lo), Some(hi)) => {
            if lo.len() != dim || hi.len() != dim {
                bail!("usage error: keys `cube_min`/`cube_max` need {dim} coordinates");
            }
            let mut a = Vec3::zeros();
            let mut b = Vec3::zeros();
            for i in 0..dim {
                a[i] = lo[i];
                b[i] = hi[i];
            }
            Aabb::new(dim, a, b)
        }
        _ => *domain.bounds(),
    };
    let fit = pk_fit(&field, &cube, &cx.fit_options(), cx.cfg.seed.unwrap_or(0))?;
    let c = cx.cfg.c.unwrap_or(CALIBRATED_C);
    let v = pk_verify(&fit, c);
    let mut w = cx.create("pk_fit.csv")?;
    fit.write_csv(&mut w)?;
    writeln!(w, "c,{}", sci(c))?;
    writeln!(w, "ratio,{}", sci(v.ratio))?;
    writeln!(w, "holds,{}", v.holds)?;
    w.flush()?;
    if cx.images() {
        let mut mask = vec![0u8; domain.cell_count()];
        for &cell in &fit.cells {
            mask[cell] = 128;
        }
        for &cell in &fit.omega {
            mask[cell] = 255;
        }
        images::write_pgm(&cx.image_path("omega.pgm"), domain, |cell| mask[cell])?;
    }
    let mut out = Outcome::default();
    if !fit.early_exit && !v.holds {
        out.violations.push(format!("fit residual ratio {:.6e} exceeds c = {c}", v.ratio));
    }
    Ok(out)
}

pub fn partition(cx: &Run) -> Result<Outcome> {
    let (seq, suite) = cx.sequence()?;
    let built = build_partition(&seq, &cx.build_options(seq[0].dim()))?;
    cx.partition_outputs(&built, suite.as_ref())?;
    Ok(Outcome::default())
}

pub fn compactness(cx: &Run) -> Result<Outcome> {
    let (seq, suite) = cx.sequence()?;
    let suite = suite.as_ref();
    let domain = seq[0].domain().clone();
    let dim = domain.dim();
    let built = build_partition(&seq, &cx.build_options(dim))?;
    cx.partition_outputs(&built, suite)?;
    let mut out = Outcome::default();

    let noise = cx.noise_bounds(seq.len(), suite);
    let conv = convergence_check(&seq, &built.motions, &noise)?;
    let mut w = cx.create("convergence.csv")?;
    conv.write_csv(&mut w)?;
    w.flush()?;
    if !conv.tail_within_tolerance() {
        out.violations.push("convergence: tail deviation above tolerance".into());
    }

    let sigmas = cx.cfg.sigma.clone();
    let mut w = cx.create("cauchy.csv")?;
    writeln!(w, "level,sigma,axis,max_lhs,bound,eta,omega_constant,energy_constant,matrix_max,holds")?;
    for j in 0..=built.report.j_max {
        for &sigma in sigmas.as_deref().unwrap_or(&DEFAULT_CAUCHY_SIGMAS) {
            for axis in 0..dim {
                let mut e = Vec3::zeros();
                e[axis] = 1.0;
                let r = cauchy_check(&seq, &built, &e, sigma, j)?;
                let max = r.lhs.iter().copied().fold(0.0, f64::max);
                let mm = r.matrix.iter().flatten().copied().fold(0.0, f64::max);
                writeln!(
                    w,
                    "{j},{sigma},{axis},{},{},{},{},{},{},{}",
                    sci(max),
                    sci(r.bound),
                    sci(r.eta),
                    sci(r.omega_constant),
                    sci(r.energy_constant),
                    sci(mm),
                    r.holds
                )?;
                if !r.holds {
                    out.violations.push(format!("cauchy: level {j}, sigma {sigma}, axis {axis}"));
                }
            }
        }
    }
    w.flush()?;

    let mode = cx.mode(suite);
    let limit = cx.limit_field(suite)?;
    let lsc_sigmas = sigmas.unwrap_or_else(|| DEFAULT_LSC_SIGMAS.to_vec());
    let lsc = lsc_check(&seq, &built.partition, limit.as_ref(), &lsc_sigmas, mode)?;
    let mut w = cx.create("lsc.csv")?;
    lsc.write_csv(&mut w)?;
    w.flush()?;
    for m in &lsc.warnings {
        eprintln!("warning: {m}");
    }
    if !lsc.holds {
        out.violations.push(format!("lsc: lhs {:.6e} > rhs {:.6e} + slack", lsc.lhs, lsc.rhs));
    }

    let rows = vec![
        ("pieces", built.partition.piece_count().to_string()),
        ("perimeter", sci(built.partition.perimeter())),
        ("tail_start", conv.tail_start.to_string()),
        ("interpolation_bound", sci(conv.interpolation_bound)),
        ("escape_volume", sci(conv.escape_volume)),
        ("convergence_holds", conv.tail_within_tolerance().to_string()),
        ("lsc_lhs", sci(lsc.lhs)),
        ("lsc_rhs", sci(lsc.rhs)),
        ("lsc_holds", lsc.holds.to_string()),
        ("violations", out.violations.len().to_string()),
    ];
    write_kv(cx.create("compactness_summary.csv")?, &rows)?;

    if cx.images() {
        let k = seq.len() - 1;
        let dev: Vec<f64> = (0..domain.cell_count())
            .map(|c| {
                let lim: Vec3 = Vec3::from_fn(|a, _| if a < dim { conv.limit[c * dim + a] } else { 0.0 });
                (seq[k].cell_value(c) - built.motions[k].at_cell(c) - lim).norm()
            })
            .collect();
        images::scalar_image(&cx.image_path("deviation.pgm"), &domain, &dev)?;
    }
    Ok(out)
}

pub fn lsc(cx: &Run) -> Result<Outcome> {
    let Some(ppath) = &cx.cfg.partition else {
        bail!("dependency error: lsc-check needs a partition file (run `partition` first and set `partition`)");
    };
    let partition = read_partition(ppath)?;
    let (seq, suite) = cx.sequence()?;
    if partition.domain() != seq[0].domain() {
        bail!("usage error: key `partition`: grid differs from the sequence grid");
    }
    let suite = suite.as_ref();
    let limit = cx.limit_field(suite)?;
    let sigmas = cx.cfg.sigma.clone().unwrap_or_else(|| DEFAULT_LSC_SIGMAS.to_vec());
    let ledger = lsc_check(&seq, &partition, limit.as_ref(), &sigmas, cx.mode(suite))?;
    let mut w = cx.create("lsc.csv")?;
    ledger.write_csv(&mut w)?;
    w.flush()?;
    for m in &ledger.warnings {
        eprintln!("warning: {m}");
    }
    let mut out = Outcome::default();
    if !ledger.holds {
        out.violations.push(format!("lsc: lhs {:.6e} > rhs {:.6e} + slack", ledger.lhs, ledger.rhs));
    }
    Ok(out)
}

pub fn energy(cx: &Run) -> Result<Outcome> {
    let field = cx.field()?;
    let p = cx.cfg.p.unwrap_or(2.0);
    let e = energy_report(&field, p)?;
    let mut w = cx.create("energy.csv")?;
    writeln!(w, "mu_hat_total,p_energy,jump_area")?;
    writeln!(w, "{},{},{}", sci(e.mu_hat_total), sci(e.p_energy), sci(e.jump_area))?;
    w.flush()?;
    if cx.images() {
        let domain = field.domain();
        let strain: Vec<f64> = (0..domain.cell_count())
            .map(|c| {
                let g = compactness::cell_gradient(&field, c);
                ((g + g.transpose()) * 0.5).norm()
            })
            .collect();
        images::scalar_image(&cx.image_path("strain.pgm"), domain, &strain)?;
    }
    Ok(Outcome::default())
}

/// Writes the fields of a suite and its true partition.
pub fn generate(cx: &Run) -> Result<Outcome> {
    let Some(s) = cx.suite()? else {
        bail!("usage error: key `suite` is required for generate");
    };
    let seq = generate_all(&s.spec)?;
    for (k, u) in seq.iter().enumerate() {
        io::write_field(cx.create(&format!("step_{:03}.field", k + 1))?, u, Payload::F64le)?;
    }
    io::write_field(cx.create("limit.field")?, &s.spec.base, Payload::F64le)?;
    io::write_partition(cx.create("truth.partition")?, &s.spec.partition)?;
    Ok(Outcome::default())
}
