//! Cable fault diagnostics workbench.
//!
//! A simulated transmission-line channel feeds three fault-detection
//! methods (OMTDR reflectometry, S-parameter CFR, PLC SNR), whose verdicts
//! are fused into a composite health index.

pub mod channel;
pub mod dataset;
mod dsp;
pub mod error;
pub mod fusion;
pub mod reflectometry;
pub mod scenario;
pub mod snr;
pub mod sparam;
pub mod state;
pub mod threshold;
pub mod waveform;
pub mod workbench;

pub use channel::{
    build_line_model, input_reflection_response, realize, synthesize_capture, synthesize_echo, synthesize_snr_trace,
    transmission_response, CableSpec, ChannelRealization, FaultSpec, LoadSpec, TwoPortModel,
};
pub use error::{Error, Result};
pub use fusion::{
    compute_health_index, compute_weight, emulate_case, estimate_conditionals, individual_hi, marginal_and_posterior,
    ConfusionModel, HealthReport, MethodId, Priors, Profile, TrustWeights,
};
pub use reflectometry::{
    correlate, detect_peaks, generate_probe, localize, MultitoneConfig, Peak, PeakSet, Probe, Reflectogram,
};
pub use snr::{SnrSummary, SnrTrace};
pub use sparam::{CfrTrace, SParamRecord};
pub use state::CableState;
pub use threshold::{ThresholdPair, Verdict};
pub use waveform::Waveform;
