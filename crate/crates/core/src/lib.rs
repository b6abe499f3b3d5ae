//! Detection-grounded evaluation pipeline for vision-language models on
//! remote sensing imagery.
//!
//! The pipeline degrades images with seeded Gaussian noise, overlays detector
//! bounding boxes, renders task prompts, dispatches them to pluggable VLM
//! backends (real or mock), parses the free-text replies into structured
//! answers, and aggregates MAE / improvement / CLIPScore-style report tables.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`imagery`] — load, degrade, annotate, and save raster images
//! - [`detection`] — label I/O, detection providers, IoU / PR / AP metrics
//! - [`prompting`] — task × condition prompt rendering
//! - [`gateway`] — VLM backend dispatch with caching, retry, rate limiting
//! - [`parsing`] — free text → counts, route statuses, captions
//! - [`metrics`] — MAE, improvement percentages, cosine / CLIPScore
//! - [`harness`] — experiment plans, grid execution, report emission

pub mod counts;
pub mod detection;
pub mod gateway;
pub mod geometry;
pub mod harness;
pub mod imagery;
pub mod metrics;
pub mod parsing;
pub mod prompting;

pub(crate) mod rand_util;
