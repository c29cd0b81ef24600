//! Named views over model parameters, in declaration order.

pub type ParamSlices<'s> = Vec<(String, &'s [f64])>;
pub type ParamSlicesMut<'s> = Vec<(String, &'s mut [f64])>;
