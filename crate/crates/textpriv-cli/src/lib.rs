//! Everything around the `textpriv` core that touches the outside world:
//! embedding and dataset file formats, the corpus pipeline with its worker
//! pool and manifest, scorer transports (child-process stdio and HTTP), the
//! calibration and bench runners, and a synthetic-embedding generator for
//! working without a real vector file.

pub mod benchrun;
pub mod calibrate;
pub mod datasets;
pub mod glove;
pub mod pipeline;
pub mod serve;
pub mod synth;
pub mod transport;
