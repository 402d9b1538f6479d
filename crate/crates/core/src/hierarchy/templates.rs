//! Built-in hierarchy skeletons for `init-config --template`.

use super::{CategoryHierarchy, Characteristic, MainCategory, Subcategory};

pub const TEMPLATE_NAMES: &[&str] = &["food", "tree", "minimal"];

type SubSpec = (&'static str, &'static [&'static str]);
type MainSpec = (&'static str, &'static str, &'static [SubSpec]);

const FOOD: &[MainSpec] = &[
    (
        "Bread",
        "Baked bread products",
        &[
            (
                "Sliced Bread",
                &["rectangular slices", "uniform thickness", "soft crumb"],
            ),
            (
                "Whole Loaves",
                &["crusty exterior", "round/oval shape", "scored top"],
            ),
            (
                "Rolls and Buns",
                &["individual portions", "soft texture", "golden top"],
            ),
        ],
    ),
    (
        "Dairy Product",
        "Milk-based foods",
        &[
            (
                "Milk and Liquid Dairy",
                &["white liquid", "containers", "glass or carton"],
            ),
            ("Cheese", &["yellow/white blocks", "slices", "wedge shape"]),
            (
                "Yogurt and Cream",
                &["thick consistency", "creamy texture", "cup or bowl"],
            ),
        ],
    ),
    (
        "Dessert",
        "Sweet dishes and treats",
        &[
            (
                "Cakes and Pastries",
                &["frosted layers", "colorful icing", "flaky layers"],
            ),
            (
                "Ice Cream and Frozen",
                &["frozen scoops", "cold treats", "cone or cup"],
            ),
            (
                "Cookies and Small Sweets",
                &["bite-sized", "chocolate pieces", "round flat shape"],
            ),
        ],
    ),
    (
        "Egg",
        "Egg-based foods",
        &[
            (
                "Whole Eggs",
                &["oval shape", "visible shells", "white or brown shell"],
            ),
            (
                "Fried and Scrambled",
                &["yellow yolk", "cooked texture", "pan fried"],
            ),
            (
                "Egg Dishes",
                &["omelets", "prepared mixtures", "folded egg"],
            ),
        ],
    ),
    (
        "Fried Food",
        "Deep or pan fried foods",
        &[
            (
                "Fried Chicken and Poultry",
                &["golden coating", "crispy texture", "drumstick shape"],
            ),
            (
                "French Fries and Chips",
                &["stick shape", "potato color", "thin slices"],
            ),
            (
                "Other Fried Foods",
                &["crispy batter", "oil-cooked", "golden brown"],
            ),
        ],
    ),
    (
        "Meat",
        "Meat products",
        &[
            ("Raw Meat", &["red color", "butcher cuts", "marbled fat"]),
            (
                "Grilled and Roasted",
                &["brown cooked", "grill marks", "charred edges"],
            ),
            (
                "Processed Meat",
                &["sausage shape", "deli cuts", "uniform slices"],
            ),
        ],
    ),
    (
        "Noodles-Pasta",
        "Noodle and pasta dishes",
        &[
            (
                "Long Pasta and Noodles",
                &["long strands", "twirled on fork", "thin ribbons"],
            ),
            (
                "Short Pasta Shapes",
                &["tube shapes", "spiral pieces", "tossed in sauce"],
            ),
            (
                "Asian Noodle Soups",
                &["broth bowl", "noodles in soup", "chopsticks"],
            ),
        ],
    ),
    (
        "Rice",
        "Rice dishes",
        &[
            (
                "Plain Cooked Rice",
                &["white grains", "steamed texture", "bowl of rice"],
            ),
            (
                "Fried Rice",
                &["mixed vegetables", "stir fried grains", "soy brown color"],
            ),
            (
                "Rice Dishes",
                &["rice with toppings", "mixed plate", "risotto or paella"],
            ),
        ],
    ),
    (
        "Seafood",
        "Fish and shellfish",
        &[
            (
                "Fish Fillets and Steaks",
                &["flaky white flesh", "fillet cut", "seared surface"],
            ),
            (
                "Shellfish and Crustaceans",
                &["hard shells", "claws", "pink orange color"],
            ),
            (
                "Whole Fish",
                &["fish head and tail", "scales", "whole body"],
            ),
        ],
    ),
    (
        "Vegetable-Fruit",
        "Produce",
        &[
            (
                "Fresh Vegetables",
                &["green leaves", "raw produce", "crisp texture"],
            ),
            (
                "Fresh Fruits",
                &["bright colors", "round fruit", "glossy skin"],
            ),
            (
                "Cooked Vegetables",
                &["steamed or roasted", "soft texture", "seasoned vegetables"],
            ),
        ],
    ),
];

const TREE: &[MainSpec] = &[
    (
        "Broadleaf Tree",
        "Trees with broad flat leaves",
        &[
            (
                "Deciduous Broadleaf",
                &["seasonal leaf drop", "broad canopy", "autumn colors"],
            ),
            (
                "Evergreen Broadleaf",
                &["year-round foliage", "glossy leaves", "dense canopy"],
            ),
            (
                "Flowering Broadleaf",
                &[
                    "visible blooms",
                    "ornamental features",
                    "colorful appearance",
                ],
            ),
        ],
    ),
    (
        "Cactus",
        "Succulent desert plants",
        &[
            (
                "Columnar Cactus",
                &["tall vertical stems", "ribbed surface", "minimal branching"],
            ),
            (
                "Barrel and Round Cactus",
                &[
                    "compact spherical form",
                    "clustered spines",
                    "short and wide",
                ],
            ),
            (
                "Branching and Pad Cactus",
                &["segmented structure", "flat surfaces", "complex growth"],
            ),
        ],
    ),
    (
        "Coniferous Tree",
        "Cone-bearing needle trees",
        &[
            (
                "Pine and Fir Trees",
                &["needle leaves", "conical shape", "pyramid form"],
            ),
            (
                "Spruce and Cedar",
                &["dense clusters", "drooping branches", "aromatic wood"],
            ),
            (
                "Juniper and Cypress",
                &["varied needles", "irregular shape", "drought tolerance"],
            ),
        ],
    ),
    (
        "Palm",
        "Palm trees",
        &[
            (
                "Fan Palm",
                &["radiating fronds", "palmate structure", "umbrella canopy"],
            ),
            (
                "Feather Palm",
                &["pinnate leaves", "graceful arching", "flowing appearance"],
            ),
            (
                "Coconut and Date Palm",
                &["tall curved trunks", "fruit clusters", "coastal adaptation"],
            ),
        ],
    ),
];

const MINIMAL: &[MainSpec] = &[
    (
        "Category A",
        "First category",
        &[(
            "Subcategory A1",
            &["first trait", "second trait", "third trait"],
        )],
    ),
    (
        "Category B",
        "Second category",
        &[(
            "Subcategory B1",
            &["first trait", "second trait", "third trait"],
        )],
    ),
];

fn build(spec: &[MainSpec]) -> CategoryHierarchy {
    CategoryHierarchy {
        version: "1".into(),
        categories: spec
            .iter()
            .map(|(name, description, subs)| MainCategory {
                name: (*name).into(),
                description: (*description).into(),
                subcategories: subs
                    .iter()
                    .map(|(sub, chars)| Subcategory {
                        name: (*sub).into(),
                        description: String::new(),
                        characteristics: chars
                            .iter()
                            .map(|c| Characteristic((*c).into()))
                            .collect(),
                        expected_visual: None,
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Returns the named built-in hierarchy, if any.
pub fn template(name: &str) -> Option<CategoryHierarchy> {
    match name {
        "food" => Some(build(FOOD)),
        "tree" => Some(build(TREE)),
        "minimal" => Some(build(MINIMAL)),
        _ => None,
    }
}
