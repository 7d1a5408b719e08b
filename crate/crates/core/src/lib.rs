pub mod evalgen;
pub mod features;
pub mod forest;
pub mod imgio;
pub mod ner;
pub mod ocr;
pub mod panels;
pub mod pipeline;
pub mod segmentation;
