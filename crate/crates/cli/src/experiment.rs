//! One experiment end to end: world, logs, models, evaluation.

use std::time::{Duration, Instant};

use channelpage_core::metrics::{evaluation_report, request_dump, MethodOutcome, ReportRow, RequestDump};
use channelpage_core::model::ClickRecord;
use channelpage_core::rng::SeedStream;
use channelpage_models::ctr::CtrContext;
use channelpage_sim::{generate_world, World};

use crate::config::ExperimentConfig;
use crate::evaluate::{compare, penalty_sweep, run_methods, Comparison, SweepPoint};
use crate::methods::{draw_requests, tune_greedy, Method, PlanSettings, Planner, Request};
use crate::pipeline::{train_models, Curves, Models};
use crate::Result;

/// Wall-clock time of the pipeline stages.
#[derive(Debug, Clone, Default)]
pub struct Timings {
    pub generate: Duration,
    pub train: Duration,
    pub tune: Duration,
    pub evaluate: Duration,
    pub sweep: Duration,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub world: World,
    pub logs: Vec<ClickRecord>,
    pub models: Models,
    pub curves: Curves,
    pub timings: Timings,
}

/// Generates the world and its training log.
pub fn world_and_logs(config: &ExperimentConfig) -> Result<(World, Vec<ClickRecord>)> {
    let world = generate_world(&config.world_config())?;
    let logs = world.logs(config.train_logs, config.logs_seed())?;
    Ok((world, logs))
}

impl Experiment {
    /// Generates data and trains every component. With `models` given,
    /// training is skipped and those are used instead.
    pub fn prepare(config: ExperimentConfig, models: Option<Models>) -> Result<Self> {
        config.validate()?;
        let mut timings = Timings::default();
        let start = Instant::now();
        let (world, logs) = world_and_logs(&config)?;
        timings.generate = start.elapsed();
        let (models, curves) = match models {
            Some(m) => (m, Curves::new()),
            None => {
                let start = Instant::now();
                let ctx = CtrContext {
                    catalog: &world.catalog,
                    channels: &world.channels,
                };
                let (mut models, curves) = train_models(&config, &ctx, &logs)?;
                timings.train = start.elapsed();
                let start = Instant::now();
                let tuning = draw_requests(
                    &world.users,
                    world.catalog.len(),
                    config.candidates,
                    &config.stream().derive("tuning"),
                    config.tuning_requests,
                );
                let planner = Planner::new(ctx, &models, PlanSettings::from_config(&config));
                let greedy = tune_greedy(&planner, &world.oracle, &tuning, &config.lambda_grid, &config.gamma_grid)?;
                models.greedy = greedy;
                timings.tune = start.elapsed();
                (models, curves)
            }
        };
        Ok(Self {
            config,
            world,
            logs,
            models,
            curves,
            timings,
        })
    }

    pub fn ctx(&self) -> CtrContext<'_> {
        CtrContext {
            catalog: &self.world.catalog,
            channels: &self.world.channels,
        }
    }

    pub fn planner(&self) -> Planner<'_> {
        Planner::new(self.ctx(), &self.models, PlanSettings::from_config(&self.config))
    }

    pub fn eval_requests(&self) -> Vec<Request> {
        self.requests("eval", self.config.eval_requests)
    }

    pub fn requests(&self, label: &str, n: usize) -> Vec<Request> {
        draw_requests(
            &self.world.users,
            self.world.catalog.len(),
            self.config.candidates,
            &self.config.stream().derive(label),
            n,
        )
    }

    pub fn click_stream(&self) -> SeedStream {
        self.config.stream().derive("clicks")
    }

    /// Runs `methods` on the evaluation stream.
    pub fn evaluate(&mut self, methods: &[Method]) -> Result<Evaluation> {
        let start = Instant::now();
        let requests = self.eval_requests();
        let planner = self.planner();
        let outcomes = run_methods(&planner, &self.world.oracle, methods, &requests, &self.click_stream())?;
        let verified = planner.allocator.verified_allocations();
        drop(planner);
        let eval = Evaluation::from_outcomes(self, outcomes, verified)?;
        self.timings.evaluate += start.elapsed();
        Ok(eval)
    }

    /// UCI-AA at each penalty of `penalties` on the sweep stream.
    pub fn sweep(&mut self, penalties: &[f64]) -> Result<Vec<SweepPoint>> {
        let start = Instant::now();
        let requests = self.requests("sweep", self.config.sweep_requests);
        let points = penalty_sweep(&self.planner(), &self.world.oracle, &requests, penalties, &self.click_stream())?;
        self.timings.sweep += start.elapsed();
        Ok(points)
    }
}

/// Ordered method pairs whose paired differences are reported.
pub const COMPARED: [(Method, Method); 7] = [
    (Method::UciAaDhanr, Method::UciAa),
    (Method::UciAa, Method::Mmr),
    (Method::UciAa, Method::Msd),
    (Method::Mmr, Method::DnnTopk),
    (Method::Msd, Method::DnnTopk),
    (Method::DnnTopk, Method::DnnSingle),
    (Method::UciAa, Method::DnnTopk),
];

pub struct Evaluation {
    pub outcomes: Vec<MethodOutcome>,
    pub report: Vec<ReportRow>,
    pub dumps: Vec<RequestDump>,
    pub comparisons: Vec<Comparison>,
    pub verified_allocations: usize,
}

impl Evaluation {
    fn from_outcomes(exp: &Experiment, outcomes: Vec<MethodOutcome>, verified_allocations: usize) -> Result<Self> {
        let (catalog, k, mode) = (&exp.world.catalog, exp.config.k, exp.config.similarity);
        let report = evaluation_report(&outcomes, catalog, k, mode)?;
        let dumps = outcomes.iter().flat_map(|o| request_dump(o, catalog, k, mode)).collect();
        let comparisons = compare(&outcomes, &COMPARED, catalog, k, mode);
        Ok(Self {
            outcomes,
            report,
            dumps,
            comparisons,
            verified_allocations,
        })
    }

    pub fn comparison(&self, metric: &str, channel: &str, better: Method, worse: Method) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.metric == metric && c.channel == channel && c.better == better.name() && c.worse == worse.name())
    }
}
