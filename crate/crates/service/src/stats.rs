//! Throughput telemetry since server start.

use std::collections::VecDeque;
use std::time::Instant;

use crate::api::{Environment, StageLatency, StageStats, StageTable, StatsReport, API_VERSION};

/// Latencies kept per stage for the percentile window.
const WINDOW: usize = 1024;

#[derive(Debug, Default)]
struct Stage {
    count: u64,
    total_ms: f64,
    recent: VecDeque<f64>,
}

impl Stage {
    fn record(&mut self, ms: f64) {
        self.count += 1;
        self.total_ms += ms;
        if self.recent.len() == WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(ms);
    }

    fn report(&self) -> StageStats {
        if self.count == 0 {
            return StageStats::default();
        }
        let mut sorted: Vec<f64> = self.recent.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        StageStats {
            count: self.count,
            fps: if self.total_ms > 0.0 { self.count as f64 * 1000.0 / self.total_ms } else { 0.0 },
            mean_ms: self.total_ms / self.count as f64,
            p50_ms: percentile(&sorted, 0.50),
            p90_ms: percentile(&sorted, 0.90),
            p99_ms: percentile(&sorted, 0.99),
        }
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug)]
pub struct Stats {
    started: Instant,
    requests: u64,
    errors: u64,
    features: Stage,
    predictor: Stage,
    rasterize: Stage,
    reenactor: Stage,
    encode: Stage,
    total: Stage,
}

impl Default for Stats {
    fn default() -> Self {
        Stats {
            started: Instant::now(),
            requests: 0,
            errors: 0,
            features: Stage::default(),
            predictor: Stage::default(),
            rasterize: Stage::default(),
            reenactor: Stage::default(),
            encode: Stage::default(),
            total: Stage::default(),
        }
    }
}

impl Stats {
    pub fn request(&mut self) {
        self.requests += 1;
    }

    pub fn error(&mut self) {
        self.errors += 1;
    }

    /// Records one generated frame. A zero feature time means the stage was shared.
    pub fn frame(&mut self, l: &StageLatency, featurized: bool) {
        if featurized {
            self.features.record(l.features);
        }
        self.predictor.record(l.predictor);
        self.rasterize.record(l.rasterize);
        self.reenactor.record(l.reenactor);
        self.encode.record(l.encode);
        self.total.record(l.total);
    }

    pub fn report(&self) -> StatsReport {
        StatsReport {
            version: API_VERSION.to_string(),
            uptime_s: self.started.elapsed().as_secs_f64(),
            request_count: self.requests,
            error_count: self.errors,
            frame_count: self.total.count,
            stages: StageTable {
                features: self.features.report(),
                predictor: self.predictor.report(),
                rasterize: self.rasterize.report(),
                reenactor: self.reenactor.report(),
                encode: self.encode.report(),
                total: self.total.report(),
            },
            environment: Environment::current(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 5.0);
        assert_eq!(percentile(&v, 0.9), 9.0);
        assert_eq!(percentile(&v, 0.99), 10.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&[], 0.5), 0.0);
    }

    #[test]
    fn fresh_stats_are_zero() {
        let r = Stats::default().report();
        assert_eq!((r.request_count, r.error_count, r.frame_count), (0, 0, 0));
        assert_eq!(r.stages, StageTable::default());
    }

    #[test]
    fn window_is_bounded() {
        let mut s = Stage::default();
        for i in 0..(WINDOW + 10) {
            s.record(i as f64);
        }
        assert_eq!(s.recent.len(), WINDOW);
        assert_eq!(s.count as usize, WINDOW + 10);
        assert_eq!(s.report().p50_ms, percentile(&s.recent.iter().copied().collect::<Vec<_>>(), 0.5));
    }
}
