//! End-to-end pipelines for the sensor-field and CEO experiments: design,
//! Monte Carlo evaluation and SNR reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{DesignArtifact, Mode, Provenance, SCHEMA_VERSION};
use crate::cluster::{cluster_sources, plan_kld, ClusterPlan};
use crate::config::{ExperimentConfig, Scenario};
use crate::decode::Factor;
use crate::error::{Error, Result};
use crate::factorize::{factorization_kld, factorize, Ccre, CcreFactor};
use crate::gauss_model::{build_ceo_model, SensorField};
use crate::index_assign::{optimize_index_reuse, ClusterCodeDesign, IndexAssignment};
use crate::pmf::{cell_count, conditional_table, estimate_joint_pmf, marginalize, Estimation, JointPmf, DEFAULT_CELL_CAP};
use crate::quantizer::design_lloyd_max;
use crate::rng;

/// Floor on the error energy so that SNR stays finite.
pub const MSE_FLOOR: f64 = 1e-12;

/// Stream label offset separating link-factor PMFs from cluster PMFs.
const LINK_STREAM_OFFSET: u64 = 1 << 32;

pub fn snr_from_energies(signal: f64, error: f64) -> f64 {
    10.0 * (signal / error.max(MSE_FLOOR)).log10()
}

/// 10·log₁₀(Σ‖u‖² / max(Σ‖u − û‖², 10⁻¹²)).
pub fn snr(u: &[f64], u_hat: &[f64]) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::Scenario("SNR of an empty batch".into()));
    }
    if u.len() != u_hat.len() {
        return Err(Error::Scenario(format!("SNR over {} samples and {} estimates", u.len(), u_hat.len())));
    }
    let signal: f64 = u.iter().map(|x| x * x).sum();
    let error: f64 = u.iter().zip(u_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(snr_from_energies(signal, error))
}

/// Designs the complete coding system for one mode.
pub fn design(config: &ExperimentConfig, mode: Mode) -> Result<DesignArtifact> {
    config.validate()?;
    if let Mode::Ir { levels } = mode {
        if levels < config.codewords() {
            return Err(Error::Scenario(format!("cannot reuse indices from {levels} levels down to {}", config.codewords())));
        }
    }
    match config.scenario {
        Scenario::Field { n, beta } => design_field(config, mode, n, beta),
        Scenario::Ceo { n, sigma0_sq, lambda_sq } => design_ceo(config, mode, n, sigma0_sq, lambda_sq),
    }
}

fn estimation(config: &ExperimentConfig, stream: u64) -> Estimation {
    Estimation::new(config.simulation.pmf_samples, config.simulation.seed, stream)
}

fn design_field(config: &ExperimentConfig, mode: Mode, n: usize, beta: f64) -> Result<DesignArtifact> {
    let seed = config.simulation.seed;
    let coding = &config.coding;
    let k = config.codewords();
    let mut placement = rng::stream(seed, &[rng::PLACEMENT_STREAM]);
    let field = SensorField::random(n, beta, &mut placement);
    let model = field.model()?;
    let (dendrogram, plan) = cluster_sources(&model, coding.cluster_size)?;
    let fact = factorize(&model, &plan, coding.link_a, coding.link_b)?;

    let rate_q = design_lloyd_max(0.0, 1.0, k)?;
    let mut quantizers = vec![rate_q; n];
    if let Mode::Ir { levels } = mode {
        let fine = design_lloyd_max(0.0, 1.0, levels)?;
        for c in plan.clusters.iter().filter(|c| c.len() > 1) {
            c.iter().for_each(|&s| quantizers[s] = fine.clone());
        }
    }

    let mut cluster_pmfs: Vec<Option<JointPmf>> = vec![None; plan.clusters.len()];
    for (c, members) in plan.clusters.iter().enumerate() {
        if members.len() > 1 {
            cluster_pmfs[c] = Some(estimate_joint_pmf(&model, &quantizers, members, estimation(config, c as u64))?);
        }
    }

    let mut assignments: Vec<Option<IndexAssignment>> =
        quantizers.iter().map(|q| Some(IndexAssignment::identity(q.len()))).collect();
    let mut cluster_designs = Vec::new();
    if let Mode::Ir { .. } = mode {
        for (c, members) in plan.clusters.iter().enumerate() {
            let Some(pmf) = &cluster_pmfs[c] else { continue };
            let d = optimize_index_reuse(pmf, &quantizers, members, members, k)?;
            for (&s, a) in d.encoders.iter().zip(&d.assignments) {
                assignments[s] = Some(a.clone());
            }
            cluster_designs.push(d);
        }
    }

    let membership = plan.membership();
    let mut factors = Vec::with_capacity(fact.ccre.factors.len());
    for (m, cf) in fact.ccre.factors.iter().enumerate() {
        let mut scope = cf.scope();
        scope.sort_unstable();
        let home = membership[scope[0]];
        let joint = match &cluster_pmfs[home] {
            Some(pmf) if scope.iter().all(|&s| membership[s] == home) => marginalize(pmf, &scope)?,
            _ => estimate_joint_pmf(&model, &quantizers, &scope, estimation(config, LINK_STREAM_OFFSET + m as u64))?,
        };
        factors.push(Factor::from(conditional_table(&joint, &cf.a, &cf.b)?));
    }

    let artifact = DesignArtifact {
        schema_version: SCHEMA_VERSION,
        provenance: provenance(seed),
        config: config.clone(),
        mode,
        model,
        positions: Some(field.positions),
        quantizers,
        assignments,
        targets: (0..n).collect(),
        dendrogram: Some(dendrogram),
        plan,
        ccre: fact.ccre,
        factors,
        cluster_designs,
        kld_bits: fact.kld_bits,
    };
    artifact.validate()?;
    Ok(artifact)
}

fn provenance(seed: u64) -> Provenance {
    Provenance { seed, tool_version: env!("CARGO_PKG_VERSION").to_string() }
}

/// Joint PMF p(i₀)·∏ p(i_n | i₀) over U₀ and the encoders `1..=size`.
fn ceo_star_pmf(p0: &JointPmf, cond: &[f64], enc_levels: usize, size: usize) -> Result<JointPmf> {
    let l0 = p0.table.len();
    let mut shape = vec![l0];
    shape.extend(std::iter::repeat_n(enc_levels, size));
    let cells = cell_count(&shape).filter(|&c| c <= DEFAULT_CELL_CAP).ok_or(Error::Capacity {
        cells: cell_count(&shape).unwrap_or(usize::MAX),
        cap: DEFAULT_CELL_CAP,
    })?;
    let per_u0 = cells / l0;
    let mut table = vec![0.0; cells];
    for (i0, &p) in p0.table.iter().enumerate() {
        let row = &cond[i0 * enc_levels..(i0 + 1) * enc_levels];
        let block = &mut table[i0 * per_u0..(i0 + 1) * per_u0];
        for (f, slot) in block.iter_mut().enumerate() {
            let mut v = p;
            let mut rest = f;
            for _ in 0..size {
                v *= row[rest % enc_levels];
                rest /= enc_levels;
            }
            *slot = v;
        }
    }
    JointPmf::from_parts((0..=size).collect(), shape, table)
}

fn design_ceo(config: &ExperimentConfig, mode: Mode, n: usize, sigma0_sq: f64, lambda_sq: f64) -> Result<DesignArtifact> {
    let seed = config.simulation.seed;
    let coding = &config.coding;
    let k = config.codewords();
    let model = build_ceo_model(n, sigma0_sq, lambda_sq)?;
    let enc_levels = match mode {
        Mode::Dec => k,
        Mode::Ir { levels } => levels,
    };
    let q0 = design_lloyd_max(0.0, sigma0_sq, coding.source_levels)?;
    let qn = design_lloyd_max(0.0, sigma0_sq + lambda_sq, enc_levels)?;
    let mut quantizers = vec![q0];
    quantizers.extend(std::iter::repeat_n(qn, n));

    // every encoder sees U₀ through the same channel, so one table serves all
    let pair = estimate_joint_pmf(&model, &quantizers, &[0, 1], estimation(config, 0))?;
    let p0 = marginalize(&pair, &[0])?;
    let cond = conditional_table(&pair, &[1], &[0])?;

    let s = coding.cluster_size;
    let clusters: Vec<Vec<usize>> = (1..=n).collect::<Vec<_>>().chunks(s).map(<[usize]>::to_vec).collect();
    let mut assignments: Vec<Option<IndexAssignment>> = vec![None];
    let mut cluster_designs: Vec<ClusterCodeDesign> = Vec::new();
    match mode {
        Mode::Dec => assignments.extend((0..n).map(|_| Some(IndexAssignment::identity(enc_levels)))),
        Mode::Ir { .. } => {
            let mut by_size: Vec<(usize, ClusterCodeDesign)> = Vec::new();
            for members in &clusters {
                let size = members.len();
                if !by_size.iter().any(|(sz, _)| *sz == size) {
                    let pmf = ceo_star_pmf(&p0, &cond.table, enc_levels, size)?;
                    let omega: Vec<usize> = (1..=size).collect();
                    by_size.push((size, optimize_index_reuse(&pmf, &quantizers, &omega, &[0], k)?));
                }
                let template = &by_size.iter().find(|(sz, _)| *sz == size).unwrap().1;
                let mut d = template.clone();
                d.encoders = members.clone();
                for step in d.history.iter_mut() {
                    step.encoder = members[step.encoder - 1];
                }
                assignments.extend(d.assignments.iter().cloned().map(Some));
                cluster_designs.push(d);
            }
        }
    }

    let mut ccre = Ccre { factors: vec![CcreFactor { a: vec![0], b: vec![] }] };
    let mut factors = vec![Factor::from(p0)];
    for v in 1..=n {
        ccre.factors.push(CcreFactor { a: vec![v], b: vec![0] });
        factors.push(Factor { scope: vec![0, v], shape: cond.shape.clone(), table: cond.table.clone() });
    }
    let mut plan_clusters = vec![vec![0]];
    plan_clusters.extend(clusters);
    let plan = ClusterPlan { kld_bits: plan_kld(&model, &plan_clusters)?, clusters: plan_clusters, max_size: s.max(1) };
    let kld_bits = factorization_kld(&model, &ccre)?;

    let artifact = DesignArtifact {
        schema_version: SCHEMA_VERSION,
        provenance: provenance(seed),
        config: config.clone(),
        mode,
        model,
        positions: None,
        quantizers,
        assignments,
        targets: vec![0],
        dendrogram: None,
        plan,
        ccre,
        factors,
        cluster_designs,
        kld_bits,
    };
    artifact.validate()?;
    Ok(artifact)
}

/// Outcome of decoding fresh Monte Carlo vectors with a fixed design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub samples: usize,
    pub seed: u64,
    pub signal_energy: f64,
    pub error_energy: f64,
    /// `None` when no samples were drawn.
    pub snr_db: Option<f64>,
    /// Decodes that needed the uniform fallback.
    pub fallbacks: usize,
}

pub const SIMULATION_CSV_HEADER: &str = "scenario,mode,rate,levels,samples,seed,snr_db,fallbacks";

impl SimulationReport {
    /// One CSV row for this run of `artifact`; the SNR is left empty without samples.
    pub fn csv_row(&self, artifact: &DesignArtifact) -> String {
        let cfg = &artifact.config;
        let levels = match artifact.mode {
            Mode::Dec => cfg.codewords(),
            Mode::Ir { levels } => levels,
        };
        let snr = self.snr_db.map(|s| format!("{s:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            cfg.scenario.name(),
            artifact.mode.label(),
            cfg.coding.rate,
            levels,
            self.samples,
            self.seed,
            snr,
            self.fallbacks
        )
    }
}

/// Encodes and decodes `samples` fresh source vectors.
pub fn simulate(artifact: &DesignArtifact, samples: usize, seed: u64) -> Result<SimulationReport> {
    let decoder = artifact.decoder()?;
    let sampler = artifact.model.sampler()?;
    let dim = artifact.n_variables();
    let batches: Vec<(u64, usize)> = rng::batches(samples).collect();
    let parts: Vec<Result<(f64, f64, usize)>> = batches
        .par_iter()
        .map(|&(b, len)| {
            let mut r = rng::stream(seed, &[rng::EVAL_STREAM, b]);
            let mut buf = vec![0.0; len * dim];
            sampler.fill(&mut r, &mut buf);
            let mut w = vec![0usize; dim];
            let (mut signal, mut error, mut fallbacks) = (0.0, 0.0, 0);
            for u in buf.chunks_exact(dim) {
                for (v, slot) in w.iter_mut().enumerate() {
                    *slot = match &artifact.assignments[v] {
                        Some(a) => a.encode(artifact.quantizers[v].cell(u[v])),
                        None => 0,
                    };
                }
                let (est, fb) = decoder.decode_all(&w)?;
                fallbacks += fb;
                for (&t, e) in artifact.targets.iter().zip(est) {
                    signal += u[t] * u[t];
                    error += (u[t] - e).powi(2);
                }
            }
            Ok((signal, error, fallbacks))
        })
        .collect();
    let (mut signal, mut error, mut fallbacks) = (0.0, 0.0, 0);
    for p in parts {
        let (s, e, f) = p?;
        signal += s;
        error += e;
        fallbacks += f;
    }
    let snr_db = (samples > 0).then(|| snr_from_energies(signal, error));
    Ok(SimulationReport { samples, seed, signal_energy: signal, error_energy: error, snr_db, fallbacks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: Mode,
    pub snr_db: f64,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IrOutcome {
    Best { levels: usize, snr_db: f64 },
    /// No candidate resolution exceeds 2^R.
    NotAvailable,
    /// Every candidate stayed below the quantize-only result.
    NoBenefit { levels: usize, snr_db: f64 },
}

impl IrOutcome {
    pub fn cell(&self) -> String {
        match self {
            IrOutcome::Best { snr_db, .. } => format!("{snr_db:.2}"),
            IrOutcome::NotAvailable => "N.A.".into(),
            IrOutcome::NoBenefit { .. } => "N.B.".into(),
        }
    }

    pub fn snr_db(&self) -> Option<f64> {
        match self {
            IrOutcome::Best { snr_db, .. } | IrOutcome::NoBenefit { snr_db, .. } => Some(*snr_db),
            IrOutcome::NotAvailable => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub rate: u32,
    pub seed: u64,
    pub dec: ModeResult,
    pub ir_candidates: Vec<ModeResult>,
    pub ir: IrOutcome,
}

pub const CSV_HEADER: &str = "scenario,mode,rate,levels,snr_db,fallbacks,seed";

impl ExperimentReport {
    pub fn csv_rows(&self) -> Vec<String> {
        let row = |r: &ModeResult| {
            let levels = match r.mode {
                Mode::Dec => 1usize << self.rate,
                Mode::Ir { levels } => levels,
            };
            format!("{},{},{},{},{:.6},{},{}", self.scenario, r.mode.label(), self.rate, levels, r.snr_db, r.fallbacks, self.seed)
        };
        let mut rows = vec![row(&self.dec)];
        rows.extend(self.ir_candidates.iter().map(row));
        let best = match &self.ir {
            IrOutcome::Best { levels, snr_db } => format!("{levels},{snr_db:.6}"),
            IrOutcome::NotAvailable => ",N.A.".into(),
            IrOutcome::NoBenefit { levels, .. } => format!("{levels},N.B."),
        };
        rows.push(format!("{},ir_best,{},{},,{}", self.scenario, self.rate, best, self.seed));
        rows
    }
}

/// Runs Dec and every index-reuse candidate for the configured rate.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let sim = &config.simulation;
    let evaluate = |mode: Mode| -> Result<ModeResult> {
        let artifact = design(config, mode)?;
        let report = simulate(&artifact, sim.eval_samples, sim.seed)?;
        Ok(ModeResult { mode, snr_db: report.snr_db.unwrap_or(f64::NAN), fallbacks: report.fallbacks })
    };
    let dec = evaluate(Mode::Dec)?;
    let ir_candidates: Vec<ModeResult> =
        config.ir_candidates().into_iter().map(|levels| evaluate(Mode::Ir { levels })).collect::<Result<_>>()?;
    let best = ir_candidates
        .iter()
        .filter(|r| r.snr_db.is_finite())
        .max_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
    let ir = match best {
        None => IrOutcome::NotAvailable,
        Some(r) => {
            let Mode::Ir { levels } = r.mode else { unreachable!() };
            if r.snr_db > dec.snr_db {
                IrOutcome::Best { levels, snr_db: r.snr_db }
            } else {
                IrOutcome::NoBenefit { levels, snr_db: r.snr_db }
            }
        }
    };
    Ok(ExperimentReport { scenario: config.scenario.name().into(), rate: config.coding.rate, seed: sim.seed, dec, ir_candidates, ir })
}

/// Reports of one configuration under several master seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSweep {
    pub reports: Vec<ExperimentReport>,
}

impl SeedSweep {
    pub fn mean_dec(&self) -> f64 {
        mean(self.reports.iter().map(|r| r.dec.snr_db))
    }

    /// Mean over seeds of the best index-reuse candidate, `None` without candidates.
    pub fn mean_ir(&self) -> Option<f64> {
        let best: Option<Vec<f64>> = self.reports.iter().map(|r| r.ir.snr_db()).collect();
        best.map(|b| mean(b.into_iter()))
    }

    /// Mean SNR of one candidate resolution.
    pub fn mean_candidate(&self, levels: usize) -> Option<f64> {
        let snrs: Option<Vec<f64>> = self
            .reports
            .iter()
            .map(|r| r.ir_candidates.iter().find(|c| c.mode == Mode::Ir { levels }).map(|c| c.snr_db))
            .collect();
        snrs.map(|s| mean(s.into_iter()))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

/// Runs the experiment once per seed, overriding the configured seed.
pub fn run_seeds(config: &ExperimentConfig, seeds: &[u64]) -> Result<SeedSweep> {
    let reports = seeds
        .iter()
        .map(|&seed| {
            let mut c = config.clone();
            c.simulation.seed = seed;
            run_experiment(&c)
        })
        .collect::<Result<_>>()?;
    Ok(SeedSweep { reports })
}

/// SNR in dB at the sum-rate distortion bound of the symmetric Gaussian CEO
/// problem with `n` encoders sending `rate` bits each.
pub fn ceo_rate_distortion_snr(n: usize, sigma0_sq: f64, lambda_sq: f64, rate: f64) -> f64 {
    let nf = n as f64;
    let sum_rate = |d: f64| {
        0.5 * (sigma0_sq / d).log2() + 0.5 * nf * ((nf / lambda_sq) / (nf / lambda_sq - 1.0 / d + 1.0 / sigma0_sq)).log2()
    };
    let target = nf * rate;
    let d_min = 1.0 / (1.0 / sigma0_sq + nf / lambda_sq);
    let (mut lo, mut hi) = (d_min.ln(), sigma0_sq.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum_rate(mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    10.0 * (sigma0_sq / (0.5 * (lo + hi)).exp()).log10()
}
