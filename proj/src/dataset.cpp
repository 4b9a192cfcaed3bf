#include "flowgate/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string_view>

#include "flowgate/error.hpp"

namespace flowgate::dataset {

namespace {

void append_general(std::string& out, double v, int precision) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, precision);
  out.append(buf, res.ptr);
}

void append_shortest(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view cell, std::size_t row) {
  double v = 0.0;
  auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
    throw Error(ErrorCode::MalformedRow,
                "row " + std::to_string(row) + ": non-numeric value '" + std::string(cell) + "'");
  }
  return v;
}

std::ofstream open_out(const std::filesystem::path& out) {
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoFailure, "cannot open " + out.string() + " for writing");
  return f;
}

std::ifstream open_in(const std::filesystem::path& in) {
  std::ifstream f(in, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoFailure, "cannot open " + in.string());
  return f;
}

}  // namespace

std::string label_cell(const std::optional<Label>& label) {
  if (!label) return "";
  return *label == Label::Normal ? "0" : "1";
}

std::optional<Label> parse_label_cell(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  if (cell == "0") return Label::Normal;
  if (cell == "1") return Label::Anomaly;
  throw Error(ErrorCode::MalformedRow, "label must be 0, 1 or empty, got '" + cell + "'");
}

std::size_t write_dataset(std::span<const EncodedPacket> packets, const std::filesystem::path& out) {
  auto f = open_out(out);
  std::string line;
  for (std::size_t i = 0; i < packet::kPacketLength; ++i) {
    line += 'f';
    line += std::to_string(i);
    line += ',';
  }
  line += "label\n";
  f << line;
  for (const auto& p : packets) {
    if (p.values.size() != packet::kPacketLength) {
      throw Error(ErrorCode::ShapeMismatch, "encoded packet with " + std::to_string(p.values.size()) + " values");
    }
    line.clear();
    for (double v : p.values) {
      append_general(line, v, 9);
      line += ',';
    }
    line += label_cell(p.label);
    line += '\n';
    f << line;
  }
  f.flush();
  if (!f) throw Error(ErrorCode::IoFailure, "write failed on " + out.string());
  return packets.size();
}

std::vector<EncodedPacket> read_dataset(const std::filesystem::path& in) {
  auto f = open_in(in);
  std::string line;
  if (!std::getline(f, line)) throw Error(ErrorCode::MalformedRow, "missing header in " + in.string());
  if (split(trim_cr(line)).size() != packet::kPacketLength + 1) {
    throw Error(ErrorCode::MalformedRow, "header has wrong column count");
  }
  std::vector<EncodedPacket> out;
  const std::string file = in.string();
  std::size_t row = 0;
  while (std::getline(f, line)) {
    const auto view = trim_cr(line);
    if (view.empty()) continue;
    const auto cells = split(view);
    if (cells.size() != packet::kPacketLength + 1) {
      throw Error(ErrorCode::MalformedRow, "row " + std::to_string(row) + " has " +
                                               std::to_string(cells.size()) + " columns");
    }
    EncodedPacket p;
    p.values.resize(packet::kPacketLength);
    for (std::size_t i = 0; i < packet::kPacketLength; ++i) {
      const double v = parse_number(cells[i], row);
      if (!(v >= 0.0 && v <= 1.0)) {
        throw Error(ErrorCode::MalformedRow,
                    "row " + std::to_string(row) + ": value " + std::string(cells[i]) + " outside [0,1]");
      }
      p.values[i] = std::round(v * 255.0) / 255.0;
    }
    p.label = parse_label_cell(std::string(cells.back()));
    p.source = {file, row};
    out.push_back(std::move(p));
    ++row;
  }
  return out;
}

void write_latents(const LatentSet& set, const std::filesystem::path& out) {
  if (set.labels.size() != set.size()) {
    throw Error(ErrorCode::ShapeMismatch, "latent labels do not match row count");
  }
  auto f = open_out(out);
  std::string line;
  for (std::size_t i = 0; i < set.dim(); ++i) {
    line += 'z';
    line += std::to_string(i);
    line += ',';
  }
  line += "label\n";
  f << line;
  for (Eigen::Index r = 0; r < set.z.rows(); ++r) {
    line.clear();
    for (Eigen::Index c = 0; c < set.z.cols(); ++c) {
      append_shortest(line, set.z(r, c));
      line += ',';
    }
    line += label_cell(set.labels[static_cast<std::size_t>(r)]);
    line += '\n';
    f << line;
  }
  f.flush();
  if (!f) throw Error(ErrorCode::IoFailure, "write failed on " + out.string());
}

LatentSet read_latents(const std::filesystem::path& in) {
  auto f = open_in(in);
  std::string line;
  if (!std::getline(f, line)) throw Error(ErrorCode::MalformedRow, "missing header in " + in.string());
  const std::size_t cols = split(trim_cr(line)).size();
  if (cols < 2) throw Error(ErrorCode::MalformedRow, "latent header needs a label column");
  const std::size_t dim = cols - 1;
  std::vector<double> values;
  LatentSet set;
  std::size_t row = 0;
  while (std::getline(f, line)) {
    const auto view = trim_cr(line);
    if (view.empty()) continue;
    const auto cells = split(view);
    if (cells.size() != cols) {
      throw Error(ErrorCode::MalformedRow, "latent row " + std::to_string(row) + " has " +
                                               std::to_string(cells.size()) + " columns");
    }
    for (std::size_t i = 0; i < dim; ++i) {
      const double v = parse_number(cells[i], row);
      if (!std::isfinite(v)) throw Error(ErrorCode::MalformedRow, "non-finite latent value");
      values.push_back(v);
    }
    set.labels.push_back(parse_label_cell(std::string(cells.back())));
    ++row;
  }
  set.z = Eigen::Map<nn::Tensor>(values.data(), static_cast<Eigen::Index>(row),
                                 static_cast<Eigen::Index>(dim));
  return set;
}

nn::Tensor to_matrix(std::span<const EncodedPacket> packets) {
  nn::Tensor m(static_cast<Eigen::Index>(packets.size()), static_cast<Eigen::Index>(packet::kPacketLength));
  for (std::size_t i = 0; i < packets.size(); ++i) {
    if (packets[i].values.size() != packet::kPacketLength) {
      throw Error(ErrorCode::ShapeMismatch, "encoded packet has wrong length");
    }
    m.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(packets[i].values.data(), static_cast<Eigen::Index>(packet::kPacketLength));
  }
  return m;
}

void require_normal_only(std::span<const EncodedPacket> packets, const char* stage) {
  for (const auto& p : packets) {
    if (p.label == Label::Anomaly) {
      throw Error(ErrorCode::AnomalyInTrainingSet,
                  std::string(stage) + ": labeled anomaly at " + p.source.file + "#" +
                      std::to_string(p.source.index));
    }
  }
}

void require_normal_only(const LatentSet& set, const char* stage) {
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    if (set.labels[i] == Label::Anomaly) {
      throw Error(ErrorCode::AnomalyInTrainingSet,
                  std::string(stage) + ": labeled anomaly latent at row " + std::to_string(i));
    }
  }
}

}  // namespace flowgate::dataset
