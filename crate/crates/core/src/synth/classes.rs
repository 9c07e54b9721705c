//! Land-cover legends for the two categorical products.

/// Dynamic World style legend, 9 classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum DwClass {
    Water = 0,
    Trees,
    Grass,
    FloodedVegetation,
    Crops,
    ShrubAndScrub,
    Built,
    Bare,
    SnowAndIce,
}

pub const DW_CLASSES: usize = 9;
pub const ESA_CLASSES: usize = 11;

impl DwClass {
    pub const ALL: [DwClass; DW_CLASSES] = [
        DwClass::Water,
        DwClass::Trees,
        DwClass::Grass,
        DwClass::FloodedVegetation,
        DwClass::Crops,
        DwClass::ShrubAndScrub,
        DwClass::Built,
        DwClass::Bare,
        DwClass::SnowAndIce,
    ];

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn key(self) -> &'static str {
        match self {
            DwClass::Water => "water",
            DwClass::Trees => "trees",
            DwClass::Grass => "grass",
            DwClass::FloodedVegetation => "flooded_vegetation",
            DwClass::Crops => "crops",
            DwClass::ShrubAndScrub => "shrub_and_scrub",
            DwClass::Built => "built",
            DwClass::Bare => "bare",
            DwClass::SnowAndIce => "snow_and_ice",
        }
    }

    /// Caption noun naming the class.
    pub fn noun(self) -> &'static str {
        match self {
            DwClass::Water => "water",
            DwClass::Trees => "forest",
            DwClass::Grass => "grassland",
            DwClass::FloodedVegetation => "wetland",
            DwClass::Crops => "cropland",
            DwClass::ShrubAndScrub => "shrubland",
            DwClass::Built => "settlement",
            DwClass::Bare => "barrens",
            DwClass::SnowAndIce => "snowfield",
        }
    }
}

/// ESA WorldCover style legend, 11 classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum EsaClass {
    TreeCover = 0,
    Shrubland,
    Grassland,
    Cropland,
    BuiltUp,
    BareSparse,
    SnowIce,
    PermanentWater,
    HerbaceousWetland,
    Mangroves,
    MossLichen,
}

impl EsaClass {
    pub const ALL: [EsaClass; ESA_CLASSES] = [
        EsaClass::TreeCover,
        EsaClass::Shrubland,
        EsaClass::Grassland,
        EsaClass::Cropland,
        EsaClass::BuiltUp,
        EsaClass::BareSparse,
        EsaClass::SnowIce,
        EsaClass::PermanentWater,
        EsaClass::HerbaceousWetland,
        EsaClass::Mangroves,
        EsaClass::MossLichen,
    ];

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn key(self) -> &'static str {
        match self {
            EsaClass::TreeCover => "tree_cover",
            EsaClass::Shrubland => "shrubland",
            EsaClass::Grassland => "grassland",
            EsaClass::Cropland => "cropland",
            EsaClass::BuiltUp => "built_up",
            EsaClass::BareSparse => "bare_sparse",
            EsaClass::SnowIce => "snow_ice",
            EsaClass::PermanentWater => "permanent_water",
            EsaClass::HerbaceousWetland => "herbaceous_wetland",
            EsaClass::Mangroves => "mangroves",
            EsaClass::MossLichen => "moss_lichen",
        }
    }

    /// Nearest class in the coarser legend.
    pub fn to_dw(self) -> DwClass {
        match self {
            EsaClass::TreeCover | EsaClass::Mangroves => DwClass::Trees,
            EsaClass::Shrubland => DwClass::ShrubAndScrub,
            EsaClass::Grassland => DwClass::Grass,
            EsaClass::Cropland => DwClass::Crops,
            EsaClass::BuiltUp => DwClass::Built,
            EsaClass::BareSparse | EsaClass::MossLichen => DwClass::Bare,
            EsaClass::SnowIce => DwClass::SnowAndIce,
            EsaClass::PermanentWater => DwClass::Water,
            EsaClass::HerbaceousWetland => DwClass::FloodedVegetation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for c in DwClass::ALL {
            assert_eq!(DwClass::from_id(c.id()), Some(c));
        }
        for c in EsaClass::ALL {
            assert_eq!(EsaClass::from_id(c.id()), Some(c));
        }
        assert_eq!(DwClass::from_id(9), None);
        assert_eq!(EsaClass::from_id(11), None);
    }

    #[test]
    fn every_dw_class_is_reachable_from_esa() {
        for d in DwClass::ALL {
            assert!(EsaClass::ALL.iter().any(|e| e.to_dw() == d), "{d:?}");
        }
    }
}
