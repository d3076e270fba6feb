pub mod opcore;
pub mod sfun;
pub mod bs;
pub mod threshold;
pub mod levinson;
pub mod waveop;
