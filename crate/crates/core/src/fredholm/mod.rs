//! Lower norms, local and global parametrices, symbol invertibility of
//! constant-coefficient limits, and the Fredholm consistency verdict.

mod laurent;
mod lower_norm;
mod parametrix;
mod verdict;

pub use laurent::{
    laurent_coefficients, laurent_invertibility, laurent_invertibility_on_grid, LaurentCoefficients, LaurentReport,
    SYMBOL_GRID_POINTS,
};
pub use lower_norm::{
    localization_radius, lower_norm, lower_norm_with, restricted_lower_norm, restricted_lower_norm_with,
    LowerNormMethod, LowerNormOptions, LowerNormResult,
};
pub use parametrix::{
    assemble_parametrix, local_parametrices, DefectPoint, LimitInvertibility, LocalParametrixSet, Parametrix,
    ParametrixConfig, ParametrixMetrics,
};
pub use verdict::{
    classify_limit, fredholm_verdict, spectrum_lower_norm_infimum, BoundedBelowCheck, Checklist, Evidence, FredholmReport,
    LimitVerdict, LocalizationCheck, SectionPoint, SpectrumInfimum, Verdict, VerdictConfig,
};
