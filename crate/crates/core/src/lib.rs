//! Approximate nearest-neighbor search for polygonal curves under the
//! continuous Frechet distance.
//!
//! The library answers (kappa, delta)-near-neighbor queries over a corpus of
//! polygonal curves: a query either certifies that every corpus curve is
//! farther than `delta`, or returns a curve within `kappa * delta`, with
//! `kappa` either `1 + 24 eps` or `3 + 24 eps`. A distance-free wrapper
//! binary-searches a geometric ladder of scales to answer plain approximate
//! nearest-neighbor queries.
//!
//! Module map:
//! - [`geometry`]: points, segments, boxes, visibility regions, root finding
//! - [`frechet`]: continuous/discrete Frechet decision and value engines
//! - [`grids`]: the three lattice cell families taken around input vertices
//! - [`segquery`]: first-cell-hit oracles for segments (brute force and the
//!   packed-line/canonical-segment structure)
//! - [`encoding`]: coarse encodings of query curves and the per-curve tests
//! - [`index`]: the trie-backed near-neighbor index over encodings
//! - [`reduction`]: scale ladder turning near-neighbor into nearest-neighbor
//! - [`cli`]: dataset ingestion, command entry points, self tests

pub mod cli;
pub mod encoding;
pub mod frechet;
pub mod geometry;
pub mod grids;
pub mod index;
pub mod reduction;
pub mod segquery;
pub mod tolerances;
