//! URDF serialization and ingestion.
//!
//! Output is canonical: links then joints, each in construction order, with
//! floats in shortest round-trip form. Two extensions carry what plain URDF
//! cannot: a top-level `<xembody class=".."><variation .../></xembody>`
//! element and a `<nominal angle=".."/>` child on actuated joints. Other
//! URDF consumers ignore both.

mod parse;
mod write;

pub use parse::from_urdf;
pub use write::to_urdf;

use std::fmt;

use crate::embodiment::{descriptor_of, ClassControlConstants, EmbodimentDescriptor, MorphologyClass};
use crate::error::Result;

/// URDF XML text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UrdfDocument {
    pub xml: String,
}

impl UrdfDocument {
    pub fn new(xml: impl Into<String>) -> Self {
        UrdfDocument { xml: xml.into() }
    }
}

impl fmt::Display for UrdfDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.xml)
    }
}

/// Descriptor computed from the URDF alone. `class` overrides inference.
pub fn descriptor_from_urdf(
    doc: &UrdfDocument,
    ctrl: &ClassControlConstants,
    class: Option<MorphologyClass>,
) -> Result<EmbodimentDescriptor> {
    descriptor_of(&from_urdf(doc, class)?, ctrl)
}
