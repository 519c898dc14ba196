#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace avbr {

inline constexpr int kNumCategories = 10;
inline constexpr int kBackgroundId = 9;

struct BehaviorCategory {
    int id = 0;
    std::string_view name;         // canonical name, storage form
    std::string_view description;  // expert description shipped with the taxonomy
    bool is_social = false;        // true for the three audio-dependent categories
};

// The fixed 10-category behavior taxonomy, indexed by id.
const std::array<BehaviorCategory, kNumCategories>& taxonomy();

// Case-insensitive lookup by canonical name. Returns nullptr when unknown.
const BehaviorCategory* find_category(std::string_view name);

// Label set over the 10 categories, stored as a bitmask.
class LabelMask {
public:
    LabelMask() = default;
    static LabelMask background() { return LabelMask().with(kBackgroundId); }

    LabelMask with(int id) const {
        LabelMask m = *this;
        m.bits_ |= static_cast<uint16_t>(1u << id);
        return m;
    }
    void add(int id) { bits_ |= static_cast<uint16_t>(1u << id); }
    void remove(int id) { bits_ &= static_cast<uint16_t>(~(1u << id)); }
    bool contains(int id) const { return (bits_ >> id) & 1u; }
    bool empty() const { return bits_ == 0; }
    int count() const;
    uint16_t bits() const { return bits_; }

    LabelMask operator|(LabelMask o) const {
        LabelMask m;
        m.bits_ = bits_ | o.bits_;
        return m;
    }
    bool operator==(const LabelMask&) const = default;

    // Category ids in ascending order.
    std::vector<int> ids() const;
    // Canonical names in taxonomy id order.
    std::vector<std::string> names() const;
    // Comma-joined canonical names in taxonomy id order.
    std::string joined() const;

private:
    uint16_t bits_ = 0;
};

// Writes the taxonomy resource file (names + descriptions, JSON array).
std::string taxonomy_resource_json();

}  // namespace avbr
