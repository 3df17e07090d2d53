//! SIMO capture simulation: array response, time-division switching,
//! receive-chain impairments, noise, and the link budget.

mod array;
mod budget;
mod capture;

pub use array::{steering_vector, AngularSupport, ArrayGeometry, ArrayPlane, ElementPattern, PatternGrid};
pub use budget::{max_measurable_path_loss, BudgetLedger, BudgetReport};
pub use capture::{
    average_snapshots, cable_response, complex_gaussian, synth_channel, synth_channel_at,
    ChannelMatrix, ImpairmentProfile, NoiseConfig, Snapshot, Sounder, SwitchSchedule,
};
pub(crate) use capture::uniform_step;
