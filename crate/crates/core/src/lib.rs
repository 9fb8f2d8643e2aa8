//! Core math for handheld demonstration collection: rigid-body geometry,
//! gripper mechanism kinematics, structured marker tracking, pose-stream
//! transfer, robot executability checks, and dataset bookkeeping.
//!
//! The crate is `no_std` (with `alloc`) so the algorithms can run on embedded
//! acquisition hardware; all file formats and IO live in the companion crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod feasibility;
pub mod geometry;
pub mod mechanism;
pub mod pyramid;
pub mod tracking;
pub mod transfer;

pub use geometry::RigidTransform;
