#pragma once

// CSV storage for encoded packets and latent vectors.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowgate/nn.hpp"
#include "flowgate/packet.hpp"

namespace flowgate::dataset {

using packet::EncodedPacket;
using packet::Label;

/// Header "f0,...,f1599,label"; label column "0", "1" or empty.
std::size_t write_dataset(std::span<const EncodedPacket> packets, const std::filesystem::path& out);

/// Values are snapped to the nearest multiple of 1/255.
std::vector<EncodedPacket> read_dataset(const std::filesystem::path& in);

std::string label_cell(const std::optional<Label>& label);
std::optional<Label> parse_label_cell(const std::string& cell);

/// Latent vectors, one per row, with optional labels.
struct LatentSet {
  nn::Tensor z;
  std::vector<std::optional<Label>> labels;

  std::size_t size() const { return static_cast<std::size_t>(z.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(z.cols()); }
};

/// Header "z0,...,z{d-1},label"; values in shortest round-trip form.
void write_latents(const LatentSet& set, const std::filesystem::path& out);
LatentSet read_latents(const std::filesystem::path& in);

/// Stacks packet values into an N x 1600 tensor.
nn::Tensor to_matrix(std::span<const EncodedPacket> packets);

/// Throws AnomalyInTrainingSet if any packet carries the ANOMALY label.
void require_normal_only(std::span<const EncodedPacket> packets, const char* stage);
void require_normal_only(const LatentSet& set, const char* stage);

}  // namespace flowgate::dataset
