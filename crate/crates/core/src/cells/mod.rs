//! The MoNet unit and every comparison cell, each a pure function from
//! parameters and inputs to outputs recorded on a [`crate::Tape`].

mod conv;
mod cost;
mod model;
mod monet;
mod params;
mod recurrent;

pub use conv::conv1d_forward;
pub use cost::{flop_count, FlopCount};
pub use model::{
    batch_major, count_params, match_params, time_major, BoundModel, CellConfig, CellParams,
    ConfigError, Family, Model, ParamMatch, MATCH_TOLERANCE,
};
pub use monet::{monet_forward, monet_forward_traced, monet_unit, MoNetStepTrace};
pub use params::{
    Conv1dParams, ConvLayer, GruParams, LinearParams, LstmParams, MoNetParams, RnnParams,
};
pub use recurrent::{
    bidirectional_forward, gru_step, lstm_step, run_layer, run_stack, LstmState, RecurrentCell,
};
