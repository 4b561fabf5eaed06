//! RD curves, BD-rate, PSNR and filter-usage statistics.

pub mod bdrate;
pub mod curves;
pub mod report;

pub use bdrate::{bd_rate, RdCurve, RdPoint};
pub use curves::{
    build_rd_curve, evaluate_blockwise, psnr, quality, usage_stats, BlockwiseRun, CodedSet, CurveMode,
    UsageTable, PSNR_CAP,
};
pub use report::{
    bd_rate_json, parse_bd_rate_json, parse_rd_curves_csv, parse_usage_csv, rd_curves_csv, usage_csv,
    BdRateEntry,
};
