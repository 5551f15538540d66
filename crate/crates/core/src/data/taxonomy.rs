use crate::error::{Error, Result};

/// Ordered class names and the malignant subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTaxonomy {
    names: Vec<String>,
    malignant: Vec<usize>,
}

pub const LESION_CLASSES: [&str; 8] = [
    "Melanoma",
    "Melanocytic nevus",
    "Basal cell carcinoma",
    "Actinic keratosis",
    "Benign keratosis",
    "Dermatofibroma",
    "Vascular lesion",
    "Squamous cell carcinoma",
];

impl Default for ClassTaxonomy {
    /// The eight dermoscopic lesion classes; Melanoma, Basal cell carcinoma
    /// and Squamous cell carcinoma are malignant.
    fn default() -> Self {
        ClassTaxonomy {
            names: LESION_CLASSES.iter().map(|s| s.to_string()).collect(),
            malignant: vec![0, 2, 7],
        }
    }
}

impl ClassTaxonomy {
    pub fn new(names: Vec<String>, malignant: Vec<usize>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::invalid("a taxonomy needs at least two classes"));
        }
        if let Some(&bad) = malignant.iter().find(|&&m| m >= names.len()) {
            return Err(Error::invalid(format!("malignant class {bad} is not in the taxonomy")));
        }
        Ok(ClassTaxonomy { names, malignant })
    }

    /// Classes named `class_0`, `class_1`, … with no malignant class.
    pub fn generic(num_classes: usize) -> Self {
        ClassTaxonomy {
            names: (0..num_classes).map(|c| format!("class_{c}")).collect(),
            malignant: Vec::new(),
        }
    }

    /// The lesion taxonomy for 8 classes, otherwise [`ClassTaxonomy::generic`].
    pub fn for_classes(num_classes: usize) -> Self {
        if num_classes == LESION_CLASSES.len() {
            Self::default()
        } else {
            Self::generic(num_classes)
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_malignant(&self, class: usize) -> bool {
        self.malignant.contains(&class)
    }

    pub fn malignant(&self) -> &[usize] {
        &self.malignant
    }
}
