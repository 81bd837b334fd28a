use std::io::Write;

use crate::dp::{dp_convergence_run, DpConfig, DpRun, DpTraceRow};
use crate::error::Result;
use crate::mdp::TabularMdp;
use crate::perturbation::{DeltaSchedule, DirichletParams, XiScale};
use crate::seed::run_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DpVerifyOptions {
    pub delta0: f64,
    pub epsilon: f64,
    pub iters: usize,
    pub n_quantiles: usize,
    pub m_reward: usize,
    pub beta: f64,
    pub xi_scale: XiScale,
    pub seed: u64,
}

impl Default for DpVerifyOptions {
    fn default() -> Self {
        Self {
            delta0: 0.5,
            epsilon: 0.001,
            iters: 200,
            n_quantiles: 512,
            m_reward: 64,
            beta: DirichletParams::default().beta(),
            xi_scale: XiScale::AlphaCertified,
            seed: 0,
        }
    }
}

impl DpVerifyOptions {
    pub fn dp_config(&self) -> Result<DpConfig> {
        Ok(DpConfig {
            n_quantiles: self.n_quantiles,
            m_reward: self.m_reward,
            schedule: DeltaSchedule::power_law(self.delta0, self.epsilon)?,
            n_iters: self.iters,
            xi_scale: self.xi_scale,
            dirichlet: DirichletParams::new(self.beta)?,
            ..DpConfig::default()
        })
    }
}

/// The DP trace for `mdp`, with ξ drawn from the stream `run_rng(seed, 0)`.
pub fn dp_verify(mdp: &TabularMdp, opts: &DpVerifyOptions) -> Result<DpRun> {
    let mut rng = run_rng(opts.seed, 0);
    dp_convergence_run(mdp, &opts.dp_config()?, &mut rng)
}

/// Rows that break the bound although the schedule is summable and ξ was
/// certified to lie in the ambiguity set.
pub fn bound_violations(run: &DpRun) -> Vec<DpTraceRow> {
    run.trace
        .iter()
        .filter(|r| r.assumption_ok && r.sup_gap > r.bound)
        .copied()
        .collect()
}

pub fn write_dp_trace<W: Write>(trace: &[DpTraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "sup_gap", "bound", "assumption_ok"])?;
    for r in trace {
        w.write_record([
            r.n.to_string(),
            format!("{}", r.sup_gap),
            format!("{}", r.bound),
            u8::from(r.assumption_ok).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
