#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace snqn {

inline constexpr std::size_t kEmbeddingDim = 64;
inline constexpr std::size_t kHiddenDim = 64;
inline constexpr std::size_t kWindow = 10;

using ItemId = std::int32_t;

enum class Interaction : std::uint8_t { click = 0, purchase = 1 };

inline const char* to_string(Interaction i) {
  return i == Interaction::purchase ? "purchase" : "click";
}

/// The most recent (at most 10) interactions of a session, oldest first.
/// Positions >= valid_len hold the padding id (== n_items).
struct SessionSequence {
  std::array<ItemId, kWindow> item_ids{};
  std::array<Interaction, kWindow> interaction_types{};
  std::uint8_t valid_len = 0;

  /// Keeps the last kWindow entries of `items`.
  static SessionSequence from_history(std::span<const ItemId> items,
                                      std::span<const Interaction> types, ItemId padding_id);

  std::span<const ItemId> items() const { return {item_ids.data(), valid_len}; }
  /// Throws std::out_of_range on ids >= n_items or misplaced padding.
  void validate(std::size_t n_items) const;
  bool operator==(const SessionSequence&) const = default;
};

inline SessionSequence SessionSequence::from_history(std::span<const ItemId> items,
                                                     std::span<const Interaction> types,
                                                     ItemId padding_id) {
  if (items.empty()) throw std::invalid_argument("session window needs at least one item");
  if (!types.empty() && types.size() != items.size())
    throw std::invalid_argument("item and interaction lists differ in length");
  SessionSequence s;
  s.item_ids.fill(padding_id);
  s.interaction_types.fill(Interaction::click);
  const std::size_t start = items.size() > kWindow ? items.size() - kWindow : 0;
  s.valid_len = static_cast<std::uint8_t>(items.size() - start);
  for (std::size_t i = start; i < items.size(); ++i) {
    s.item_ids[i - start] = items[i];
    if (!types.empty()) s.interaction_types[i - start] = types[i];
  }
  return s;
}

inline void SessionSequence::validate(std::size_t n_items) const {
  if (valid_len < 1 || valid_len > kWindow)
    throw std::out_of_range("session window length " + std::to_string(valid_len) +
                            " outside [1, 10]");
  for (std::size_t i = 0; i < kWindow; ++i) {
    const auto id = item_ids[i];
    if (i < valid_len) {
      if (id < 0 || static_cast<std::size_t>(id) >= n_items)
        throw std::out_of_range("item id " + std::to_string(id) + " out of range [0, " +
                                std::to_string(n_items) + ")");
    } else if (static_cast<std::size_t>(id) != n_items) {
      throw std::out_of_range("position " + std::to_string(i) + " past valid_len must be padding");
    }
  }
}

struct RewardConfig {
  double r_click = 0.2;
  double r_purchase = 1.0;
  double r_negative = 0.0;
  double gamma = 0.5;

  double reward_for(Interaction i) const {
    return i == Interaction::purchase ? r_purchase : r_click;
  }
  double r_max() const { return std::max(r_click, r_purchase); }
  void validate() const {
    if (!(r_click > 0) || !(r_purchase > 0))
      throw std::invalid_argument("click and purchase rewards must be positive");
    if (!(gamma >= 0 && gamma < 1)) throw std::invalid_argument("gamma must be in [0, 1)");
  }
};

/// One replay-buffer transition with its sampled negative actions.
struct TDBatchItem {
  SessionSequence state;
  SessionSequence next_state;
  ItemId positive = 0;
  std::vector<ItemId> negatives;
  double reward = 0.0;
  bool is_terminal = false;
  Interaction target_type = Interaction::click;
};

}  // namespace snqn
