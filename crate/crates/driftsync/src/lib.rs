//! Drift reconciliation for Infrastructure-as-Code workspaces.
//!
//! The pipeline turns raw cloud audit-log traces into a consolidated set of
//! persistent drifts, then drives an agentic patch-evaluate-refine loop that
//! updates the IaC configuration until a deployment-free drift report comes
//! back empty.
//!
//! Stages:
//! 1. [`trace`] — ingest and prune audit-log records down to mutating events.
//! 2. [`annotate`] — normalize each event into the fixed annotation schema.
//! 3. [`consolidate`] — reduce the annotated trace to persistent drifts.
//! 4. [`iac`] — parse the workspace and compute the trimmed drift report.
//! 5. [`agent`] — run the reconciliation loop over the tool registry.
//! 6. [`eval`] — scenario harness with plan-equivalence patch checking.
//!
//! [`cloudsim`] provides a deterministic simulated cloud used both as the
//! consolidation oracle and as the live-state provider in tests; [`knowledge`]
//! holds the per-project knowledge base.

pub mod agent;
pub mod annotate;
pub mod cloudsim;
pub mod config;
pub mod consolidate;
pub mod eval;
pub mod iac;
pub mod knowledge;
pub mod trace;
