use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Object categories, in the order used for the observation one-hot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Bottle,
    Pen,
    CoffeeMaker,
    Window,
    Door,
    Lamp,
    Microwave,
    Safe,
    PressureCooker,
}

/// How the hidden mechanism of a category behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Revolute part must reach a hidden angle before it can slide.
    RotateSlide,
    /// Handle on the goal part unlocks it by turning in a hidden direction.
    LockOnHandle,
    /// Separate key part must be actuated before the goal part opens.
    LockSwitchContact,
    /// One part that must be pushed or turned one way, unknown which.
    PushRotate,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Bottle,
        Category::Pen,
        Category::CoffeeMaker,
        Category::Window,
        Category::Door,
        Category::Lamp,
        Category::Microwave,
        Category::Safe,
        Category::PressureCooker,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }

    /// Number of instances per category in the reference dataset (277 total).
    pub fn dataset_count(self) -> usize {
        match self {
            Category::Bottle => 32,
            Category::Pen => 36,
            Category::CoffeeMaker => 18,
            Category::Window => 30,
            Category::Door => 57,
            Category::Lamp => 25,
            Category::Microwave => 37,
            Category::Safe => 36,
            Category::PressureCooker => 6,
        }
    }

    pub fn family(self) -> Family {
        match self {
            Category::Bottle | Category::Pen | Category::CoffeeMaker | Category::PressureCooker => {
                Family::RotateSlide
            }
            Category::Window | Category::Door => Family::LockOnHandle,
            Category::Safe | Category::Microwave => Family::LockSwitchContact,
            Category::Lamp => Family::PushRotate,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Bottle => "bottle",
            Category::Pen => "pen",
            Category::CoffeeMaker => "coffee_maker",
            Category::Window => "window",
            Category::Door => "door",
            Category::Lamp => "lamp",
            Category::Microwave => "microwave",
            Category::Safe => "safe",
            Category::PressureCooker => "pressure_cooker",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Category::ALL
            .into_iter()
            .find(|c| c.name().replace('_', "") == norm)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_counts_total_277() {
        let total: usize = Category::ALL.iter().map(|c| c.dataset_count()).sum();
        assert_eq!(total, 277);
    }

    #[test]
    fn parse_names() {
        assert_eq!("safe".parse::<Category>().unwrap(), Category::Safe);
        assert_eq!(
            "CoffeeMaker".parse::<Category>().unwrap(),
            Category::CoffeeMaker
        );
        assert_eq!(
            "pressure-cooker".parse::<Category>().unwrap(),
            Category::PressureCooker
        );
        assert!("toaster".parse::<Category>().is_err());
    }
}
