//! Built-in vocabulary for synthetic words.

use rand::Rng;

pub const WORDS: &[&str] = &[
    "about",
    "above",
    "access",
    "across",
    "action",
    "active",
    "address",
    "adult",
    "after",
    "again",
    "agent",
    "agree",
    "ahead",
    "airport",
    "album",
    "alley",
    "allow",
    "almost",
    "alone",
    "along",
    "amber",
    "among",
    "amount",
    "angel",
    "animal",
    "annual",
    "answer",
    "apple",
    "april",
    "arena",
    "argue",
    "around",
    "arrive",
    "artist",
    "avenue",
    "award",
    "bakery",
    "balance",
    "banana",
    "bank",
    "barber",
    "basket",
    "battle",
    "beach",
    "beauty",
    "become",
    "before",
    "begin",
    "behind",
    "below",
    "berry",
    "better",
    "beyond",
    "bicycle",
    "black",
    "blank",
    "block",
    "blue",
    "board",
    "boat",
    "bonus",
    "book",
    "border",
    "bottle",
    "bottom",
    "boutique",
    "brand",
    "bread",
    "break",
    "bridge",
    "bright",
    "bring",
    "broad",
    "brown",
    "budget",
    "build",
    "burger",
    "business",
    "butter",
    "cabin",
    "cable",
    "cafe",
    "camera",
    "camp",
    "canal",
    "candle",
    "candy",
    "capital",
    "carbon",
    "card",
    "career",
    "cargo",
    "carpet",
    "castle",
    "casual",
    "cellar",
    "center",
    "chain",
    "chair",
    "change",
    "chapel",
    "charge",
    "cheap",
    "check",
    "cheese",
    "chicken",
    "choice",
    "church",
    "cinema",
    "circle",
    "city",
    "classic",
    "clean",
    "clear",
    "clinic",
    "clock",
    "close",
    "cloud",
    "coach",
    "coast",
    "coffee",
    "college",
    "color",
    "comfort",
    "common",
    "corner",
    "cottage",
    "cotton",
    "count",
    "country",
    "course",
    "court",
    "cover",
    "craft",
    "cream",
    "credit",
    "crown",
    "cruise",
    "crystal",
    "culture",
    "dance",
    "danger",
    "dark",
    "daily",
    "deal",
    "delta",
    "dental",
    "design",
    "desk",
    "diamond",
    "diesel",
    "dinner",
    "direct",
    "doctor",
    "dollar",
    "door",
    "double",
    "down",
    "dragon",
    "dream",
    "dress",
    "drink",
    "drive",
    "early",
    "earth",
    "east",
    "eagle",
    "easy",
    "edge",
    "eight",
    "electric",
    "eleven",
    "empire",
    "energy",
    "engine",
    "enter",
    "entry",
    "escape",
    "estate",
    "euro",
    "event",
    "every",
    "exit",
    "express",
    "extra",
    "factory",
    "fair",
    "family",
    "famous",
    "farm",
    "fashion",
    "fast",
    "father",
    "festival",
    "field",
    "fifty",
    "final",
    "finance",
    "fire",
    "first",
    "fish",
    "fitness",
    "flight",
    "floor",
    "flower",
    "focus",
    "food",
    "football",
    "forest",
    "forty",
    "forum",
    "fresh",
    "friday",
    "friend",
    "front",
    "fruit",
    "fuel",
    "future",
    "galaxy",
    "garage",
    "garden",
    "gate",
    "general",
    "gift",
    "glass",
    "global",
    "gold",
    "golf",
    "grand",
    "green",
    "grill",
    "group",
    "guard",
    "guide",
    "hair",
    "hall",
    "happy",
    "harbor",
    "health",
    "heart",
    "heavy",
    "hello",
    "help",
    "heritage",
    "high",
    "highway",
    "history",
    "hockey",
    "holiday",
    "home",
    "honey",
    "horse",
    "hotel",
    "house",
    "human",
    "hunter",
    "island",
    "jacket",
    "jewel",
    "journal",
    "junior",
    "justice",
    "kitchen",
    "king",
    "label",
    "labor",
    "lake",
    "land",
    "large",
    "laser",
    "late",
    "laundry",
    "lawyer",
    "leader",
    "lemon",
    "letter",
    "level",
    "library",
    "light",
    "limit",
    "line",
    "lion",
    "liquor",
    "little",
    "local",
    "lodge",
    "london",
    "lounge",
    "lucky",
    "lunch",
    "machine",
    "magic",
    "main",
    "major",
    "mall",
    "manager",
    "maple",
    "market",
    "master",
    "meat",
    "medical",
    "member",
    "metal",
    "metro",
    "middle",
    "mile",
    "milk",
    "mirror",
    "mobile",
    "modern",
    "money",
    "monday",
    "moon",
    "motel",
    "mother",
    "motor",
    "mountain",
    "movie",
    "museum",
    "music",
    "nation",
    "nature",
    "never",
    "night",
    "ninety",
    "noble",
    "north",
    "note",
    "number",
    "ocean",
    "office",
    "olive",
    "open",
    "orange",
    "order",
    "organic",
    "outlet",
    "oxford",
    "palace",
    "panel",
    "paper",
    "parade",
    "paris",
    "park",
    "parking",
    "party",
    "pasta",
    "patio",
    "peace",
    "pearl",
    "people",
    "pepper",
    "phone",
    "photo",
    "piano",
    "pizza",
    "place",
    "plant",
    "plaza",
    "pocket",
    "point",
    "police",
    "pool",
    "post",
    "power",
    "press",
    "price",
    "prime",
    "print",
    "private",
    "public",
    "pull",
    "pump",
    "push",
    "queen",
    "quick",
    "quiet",
    "radio",
    "rail",
    "rain",
    "ranch",
    "rapid",
    "record",
    "repair",
    "rescue",
    "resort",
    "restaurant",
    "retail",
    "river",
    "road",
    "rock",
    "royal",
    "rubber",
    "salad",
    "sale",
    "salon",
    "sample",
    "sauce",
    "school",
    "science",
    "screen",
    "season",
    "second",
    "secret",
    "security",
    "service",
    "seven",
    "shadow",
    "shell",
    "shoes",
    "shop",
    "signal",
    "silver",
    "simple",
    "single",
    "sister",
    "sixty",
    "smart",
    "smile",
    "snack",
    "soccer",
    "social",
    "solar",
    "south",
    "space",
    "special",
    "speed",
    "spirit",
    "sport",
    "spring",
    "square",
    "stage",
    "star",
    "station",
    "steak",
    "steel",
    "stone",
    "stop",
    "store",
    "storm",
    "street",
    "studio",
    "style",
    "sugar",
    "summer",
    "sunday",
    "super",
    "supply",
    "sushi",
    "sweet",
    "table",
    "taxi",
    "team",
    "temple",
    "tennis",
    "texas",
    "theater",
    "thirty",
    "ticket",
    "tiger",
    "timber",
    "today",
    "toilet",
    "tower",
    "town",
    "trade",
    "traffic",
    "train",
    "travel",
    "tree",
    "trust",
    "tunnel",
    "twelve",
    "twenty",
    "union",
    "united",
    "urban",
    "valley",
    "value",
    "velvet",
    "video",
    "view",
    "village",
    "vintage",
    "vision",
    "visit",
    "voice",
    "wagon",
    "walk",
    "wall",
    "water",
    "welcome",
    "west",
    "wheel",
    "white",
    "wild",
    "window",
    "wine",
    "winter",
    "wireless",
    "wood",
    "world",
    "yellow",
    "young",
    "youth",
    "zebra",
    "zone",
    "zoo",
];

/// Draw a word: mostly from the built-in vocabulary, sometimes a random
/// alphanumeric string of 3–8 characters.
pub fn random_word(rng: &mut impl Rng, random_prob: f64) -> String {
    if rng.gen_bool(random_prob.clamp(0.0, 1.0)) {
        const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
        let len = rng.gen_range(3..=8);
        (0..len)
            .map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char)
            .collect()
    } else {
        WORDS[rng.gen_range(0..WORDS.len())].to_string()
    }
}
