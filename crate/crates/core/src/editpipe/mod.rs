//! Attribute-controlled editing of extended latents: joint reverse
//! encoding, conditional forward editing, per-edit row subsets and
//! sequential edit sessions.

mod session;
mod table;

pub use session::{
    apply_edit, broadcast, cfe, interpolate_attribute, jre, subset_select, AttributeOracle, EditMode, EditRequest,
    EditSession, EditStep, Readout, Variant,
};
pub use table::{EditKind, EditTable, DEFAULT_ROWS};
