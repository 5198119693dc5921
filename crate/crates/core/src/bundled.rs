//! Sample data compiled into the library.

pub const ITEM: &str = include_str!("../data/item.json");
pub const CATALOG: &str = include_str!("../data/catalog.json");
pub const COUNTERMEASURES: &str = include_str!("../data/countermeasures.json");
pub const ATTACK_TREES: &str = include_str!("../data/attack_trees.json");
pub const VULNDB: &str = include_str!("../data/vulndb.json");
pub const SUTDB: &str = include_str!("../data/sutdb.json");

/// Script files as `(id, json)`; the id is the file stem.
pub const SCRIPTS: &[(&str, &str)] = &[
    ("S010", include_str!("../data/scripts/S010.json")),
    ("S020", include_str!("../data/scripts/S020.json")),
    ("S030", include_str!("../data/scripts/S030.json")),
    ("S031", include_str!("../data/scripts/S031.json")),
    ("S040", include_str!("../data/scripts/S040.json")),
    ("S045", include_str!("../data/scripts/S045.json")),
    ("S050", include_str!("../data/scripts/S050.json")),
    ("S060", include_str!("../data/scripts/S060.json")),
    ("S061", include_str!("../data/scripts/S061.json")),
    ("S062", include_str!("../data/scripts/S062.json")),
    ("S063", include_str!("../data/scripts/S063.json")),
    ("S064", include_str!("../data/scripts/S064.json")),
];
