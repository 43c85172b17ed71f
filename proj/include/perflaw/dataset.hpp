#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace perflaw {

using ItemId = std::int64_t;

/// One user's interaction history, oldest item first.
class InteractionSequence {
public:
    /// Throws ValidationError if items is empty, contains a non-positive id,
    /// or ratings has a different length.
    InteractionSequence(std::string user_id, std::vector<ItemId> items,
                        std::optional<std::vector<int>> ratings = std::nullopt);

    const std::string& user_id() const noexcept { return user_id_; }
    std::span<const ItemId> items() const noexcept { return items_; }
    const std::optional<std::vector<int>>& ratings() const noexcept { return ratings_; }
    std::size_t size() const noexcept { return items_.size(); }

    /// Keeps the last `count` interactions.
    InteractionSequence suffix(std::size_t count) const;

    friend bool operator==(const InteractionSequence&, const InteractionSequence&) = default;

private:
    std::string user_id_;
    std::vector<ItemId> items_;
    std::optional<std::vector<int>> ratings_;
};

struct DatasetStats {
    std::size_t num_users = 0;
    std::size_t s_max = 0;
    double s_mean = 0.0;
    std::size_t tokens = 0;
    std::size_t vocab = 0;
};

enum class SequenceFormat { csv, jsonl };

SequenceFormat parse_sequence_format(std::string_view name);

/// Guesses the format from the file extension (.csv or .jsonl/.json).
std::optional<SequenceFormat> format_from_extension(const std::filesystem::path& path);

/// Parses sequences from file contents. Rows sharing a user_id are concatenated
/// in file order. Errors carry the 1-based line number.
std::vector<InteractionSequence> parse_sequences(std::string_view text, SequenceFormat format);

std::vector<InteractionSequence> load_sequences(const std::filesystem::path& path, SequenceFormat format);

void write_sequences(const std::filesystem::path& path, std::span<const InteractionSequence> seqs,
                     SequenceFormat format);

DatasetStats compute_stats(std::span<const InteractionSequence> seqs);

/// Caps every sequence at `s_max`, keeping its most recent items.
std::vector<InteractionSequence> truncate(std::span<const InteractionSequence> seqs, std::size_t s_max);

/// Entropy (nats) of the empirical distribution over distinct whole sequences.
double sequence_distribution_entropy(std::span<const InteractionSequence> seqs);

}  // namespace perflaw
