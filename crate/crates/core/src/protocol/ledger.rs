use serde::{Deserialize, Serialize};

/// Wire width of one scalar.
pub const BYTES_PER_SCALAR: u64 = 4;

/// Training phase a transfer is attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Standard VFL training of the baselines.
    Standard,
    Pretrain,
    Stage2Upload,
    Stage3,
    PostFs,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Standard,
        Phase::Pretrain,
        Phase::Stage2Upload,
        Phase::Stage3,
        Phase::PostFs,
    ];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Standard => "standard",
            Phase::Pretrain => "pretrain",
            Phase::Stage2Upload => "stage2_upload",
            Phase::Stage3 => "stage3",
            Phase::PostFs => "post_fs",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCounters {
    /// party → server
    pub bytes_up: u64,
    /// server → party
    pub bytes_down: u64,
    pub rounds: u64,
}

impl PhaseCounters {
    pub fn total(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }
}

/// Append-only byte counters per phase and direction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    phases: [PhaseCounters; 5],
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn phase(&self, phase: Phase) -> &PhaseCounters {
        &self.phases[phase.slot()]
    }

    pub(crate) fn record_up(&mut self, phase: Phase, bytes: u64) {
        self.phases[phase.slot()].bytes_up += bytes;
    }

    pub(crate) fn record_down(&mut self, phase: Phase, bytes: u64) {
        self.phases[phase.slot()].bytes_down += bytes;
    }

    pub(crate) fn record_round(&mut self, phase: Phase) {
        self.phases[phase.slot()].rounds += 1;
    }

    pub fn bytes_up(&self) -> u64 {
        self.phases.iter().map(|p| p.bytes_up).sum()
    }

    pub fn bytes_down(&self) -> u64 {
        self.phases.iter().map(|p| p.bytes_down).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_up() + self.bytes_down()
    }

    pub fn total_mb(&self) -> f64 {
        ledger_total_mb(self)
    }
}

/// Total traffic in decimal megabytes.
pub fn ledger_total_mb(ledger: &CommLedger) -> f64 {
    ledger.total_bytes() as f64 / 1e6
}
