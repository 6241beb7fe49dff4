//! Lexicon, atlas and report templates compiled into the binary.

use std::path::Path;

use cxr_core::atlas::Atlas;
use cxr_core::report::Lexicon;
use cxr_core::synth::ReportTemplates;

use crate::error::Result;
use crate::files::{parse_atlas, parse_lexicon, parse_templates};

pub const LEXICON_TOML: &str = include_str!("../data/lexicon.toml");
pub const ATLAS_TOML: &str = include_str!("../data/atlas.toml");
pub const TEMPLATES_TOML: &str = include_str!("../data/templates.toml");
pub const SMOKE_CONFIG_TOML: &str = include_str!("../data/smoke.toml");
pub const FULL_CONFIG_TOML: &str = include_str!("../data/full.toml");

pub fn lexicon() -> Result<Lexicon> {
    parse_lexicon(LEXICON_TOML, Path::new("<shipped lexicon.toml>"))
}

pub fn atlas() -> Result<Atlas> {
    parse_atlas(ATLAS_TOML, Path::new("<shipped atlas.toml>"))
}

pub fn templates() -> Result<ReportTemplates> {
    parse_templates(TEMPLATES_TOML, Path::new("<shipped templates.toml>"))
}
