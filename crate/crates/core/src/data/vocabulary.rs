//! Fixed anatomy and pathology vocabularies.

/// The 29 anatomical structures annotated per frontal image.
pub const ANATOMY_STRUCTURES: [&str; 29] = [
    "right lung",
    "right apical zone",
    "right upper lung zone",
    "right mid lung zone",
    "right lung base",
    "right hilar structures",
    "right costophrenic angle",
    "right hemidiaphragm",
    "right clavicle",
    "left lung",
    "left apical zone",
    "left upper lung zone",
    "left mid lung zone",
    "left lung base",
    "left hilar structures",
    "left costophrenic angle",
    "left hemidiaphragm",
    "left clavicle",
    "trachea",
    "carina",
    "spine",
    "aortic arch",
    "mediastinum",
    "upper mediastinum",
    "svc",
    "cardiac silhouette",
    "cavoatrial junction",
    "right atrium",
    "abdomen",
];

/// Finding categories, in report column order.
pub const PATHOLOGIES: [&str; 8] = [
    "cardiomegaly",
    "lung opacity",
    "edema",
    "consolidation",
    "pneumonia",
    "atelectasis",
    "pneumothorax",
    "pleural effusion",
];

/// Short column headers matching [`PATHOLOGIES`].
pub const PATHOLOGY_HEADERS: [&str; 8] = [
    "Cardio.", "Opacity", "Edema", "Consol.", "Pneu.", "Atelect.", "Pneumo.", "Pl. Eff.",
];

pub fn is_anatomy_structure(name: &str) -> bool {
    ANATOMY_STRUCTURES.contains(&name)
}

pub fn is_pathology(name: &str) -> bool {
    PATHOLOGIES.contains(&name)
}
