pub mod cbf;
pub mod numkernel;
pub mod poly;
pub mod sdp;
pub mod sim;
pub mod sos;
pub mod synth;
