#include "avbr/taxonomy.hpp"

#include <algorithm>
#include <cctype>

#include "json.hpp"

namespace avbr {

namespace {

constexpr std::string_view kEyeContactDesc =
    "Difficulty with or avoidance of eye contact is a common behavior in autistic "
    "individuals. They may not naturally use eye contact as a social cue in the same way "
    "that neurotypical individuals do, and some may find maintaining eye contact "
    "uncomfortable or even distressing.";

constexpr std::string_view kNonResponsivenessDesc =
    "Many autistic people have challenges with verbal communication. This may take the "
    "form of not responding when spoken to, not initiating verbal interactions, or not "
    "using verbal communication in a typical way. This can be due to a variety of "
    "reasons, including difficulty producing language, problems with auditory processing, "
    "or discomfort with social interaction. Some autistic people may be consistently "
    "minimally verbal or nonspeaking, while others may become temporarily unable to speak "
    "in stressful situations.";

constexpr std::string_view kNonTypicalLanguageDesc =
    "Some autistic individuals use language in unconventional ways, which can include "
    "echolalia (repeating words or phrases), limited expressive vocabulary, idiosyncratic "
    "language (unique phrases or words), and literal interpretation of speech. These "
    "instances of non-typical language use can occur for a variety of reasons.";

constexpr std::string_view kAggressiveDesc =
    "Some autistic individuals may exhibit aggressive behavior, which can manifest as "
    "physical aggression (e.g., hitting, kicking, biting), verbal aggression (e.g., "
    "shouting, insults), or destructive behavior (e.g., breaking objects). Such "
    "aggression may be a response to a range of factors, such as overwhelming sensory "
    "environments, difficulty with social interactions, or frustration stemming from "
    "communication difficulties.";

constexpr std::string_view kSelfHittingDesc =
    "Some individuals on the autism spectrum may engage in self-injurious behaviors, such "
    "as head banging or hitting themselves. These behaviors can serve a number of "
    "functions, including self-stimulation, a reaction to sensory overload, a means of "
    "expressing distress, or a way to communicate needs.";

constexpr std::string_view kSensoryDesc =
    "Autistic individuals often have non-typical responses to sensory input. "
    "Hyper-reactivity refers to an oversensitivity to sensory stimuli, such as finding "
    "lights too bright or noises too loud. Hyporeactivity, on the other hand, refers to "
    "an undersensitivity, where an individual may not respond to certain stimuli or may "
    "seek out intense sensory experiences.";

constexpr std::string_view kLiningUpDesc =
    "Some autistic individuals may display a behavior known as lining up or ordering "
    "objects. This could manifest as arranging toys in a precise pattern or lining up "
    "items in a straight line. This behavior may be comforting or soothing, provide a "
    "sense of order and predictability, or satisfy a desire for visual or spatial "
    "symmetry.";

constexpr std::string_view kSpinningDesc =
    "Spinning or twirling, either in place or with objects, is another behavior sometimes "
    "observed in individuals on the autism spectrum. This could be a form of "
    "self-stimulation (also known as stimming), providing sensory input that is calming "
    "or focusing, or this behavior could be a way of coping with a stressful or "
    "overstimulating environment.";

constexpr std::string_view kStereotypiesDesc =
    "Stereotypies are repetitive, rhythmic movements that can often be observed in "
    "autistic individuals. Upper limb stereotypies can involve flapping hands, twisting "
    "wrists, or other repetitive movements of the arms or hands. These movements are "
    "generally thought to serve a self-soothing or self-stimulating function, or they may "
    "be a response to excitement or stress.";

constexpr std::string_view kBackgroundDesc =
    "None of the above behaviors are present in the clip.";

const std::array<BehaviorCategory, kNumCategories> kTaxonomy = {{
    {0, "Absence or Avoidance of Eye Contact", kEyeContactDesc, true},
    {1, "Non-Responsiveness to Verbal Interaction", kNonResponsivenessDesc, true},
    {2, "Non-Typical Language", kNonTypicalLanguageDesc, true},
    {3, "Aggressive Behavior", kAggressiveDesc, false},
    {4, "Self-Hitting or Self-Injurious Behavior", kSelfHittingDesc, false},
    {5, "Hyper- or Hyporeactivity to Sensory Input", kSensoryDesc, false},
    {6, "Object Lining-Up", kLiningUpDesc, false},
    {7, "Self-Spinning or Spinning Objects", kSpinningDesc, false},
    {8, "Upper Limb Stereotypies", kStereotypiesDesc, false},
    {9, "Background", kBackgroundDesc, false},
}};

bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(a[i])) !=
            std::tolower(static_cast<unsigned char>(b[i]))) {
            return false;
        }
    }
    return true;
}

}  // namespace

const std::array<BehaviorCategory, kNumCategories>& taxonomy() { return kTaxonomy; }

const BehaviorCategory* find_category(std::string_view name) {
    for (const auto& cat : kTaxonomy) {
        if (iequals(cat.name, name)) return &cat;
    }
    return nullptr;
}

int LabelMask::count() const {
    int n = 0;
    for (int id = 0; id < kNumCategories; ++id) n += contains(id);
    return n;
}

std::vector<int> LabelMask::ids() const {
    std::vector<int> out;
    for (int id = 0; id < kNumCategories; ++id) {
        if (contains(id)) out.push_back(id);
    }
    return out;
}

std::vector<std::string> LabelMask::names() const {
    std::vector<std::string> out;
    for (int id : ids()) out.emplace_back(kTaxonomy[id].name);
    return out;
}

std::string LabelMask::joined() const {
    std::string out;
    for (int id : ids()) {
        if (!out.empty()) out += ", ";
        out += kTaxonomy[id].name;
    }
    return out;
}

std::string taxonomy_resource_json() {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& cat : kTaxonomy) {
        arr.push_back({{"id", cat.id},
                       {"name", std::string(cat.name)},
                       {"description", std::string(cat.description)},
                       {"is_social", cat.is_social}});
    }
    return arr.dump(2) + "\n";
}

}  // namespace avbr
