pub mod annotate;
pub mod exposure;
pub mod kitagawa;
pub mod oaxaca;
pub mod panel;
pub mod records;
pub mod report;
pub mod synth;
