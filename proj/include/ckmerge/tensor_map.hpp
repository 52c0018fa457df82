#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ckmerge/dtype.hpp"
#include "ckmerge/errors.hpp"

namespace ckmerge {

/// Element count of a shape, with overflow protection. Dimensions must be
/// non-negative; a zero dimension yields an empty tensor.
inline std::uint64_t shape_elements(std::span<const std::int64_t> shape) {
  std::uint64_t n = 1;
  for (std::int64_t dim : shape) {
    if (dim < 0) throw FormatError("negative shape dimension " + std::to_string(dim));
    const auto d = static_cast<std::uint64_t>(dim);
    if (d != 0 && n > UINT64_MAX / d) throw FormatError("shape element count overflows");
    n *= d;
  }
  return n;
}

/// One named tensor: dtype + shape metadata and a contiguous little-endian
/// element buffer.
struct TensorRecord {
  std::string name;
  Dtype dtype = Dtype::F32;
  std::vector<std::int64_t> shape;
  std::vector<std::byte> data;

  std::uint64_t elements() const { return shape_elements(shape); }

  void validate() const {
    if (name.empty()) throw FormatError("tensor with empty name");
    const std::uint64_t n = elements();
    if (n * byte_width(dtype) != data.size())
      throw FormatError("tensor \"" + name + "\": buffer holds " +
                        std::to_string(data.size()) + " bytes, shape needs " +
                        std::to_string(n * byte_width(dtype)));
  }

  std::vector<float> to_f32() const { return ckmerge::to_f32(dtype, data); }
};

inline TensorRecord make_record(std::string name, Dtype dtype,
                                std::vector<std::int64_t> shape,
                                std::span<const float> values) {
  TensorRecord rec;
  rec.name = std::move(name);
  rec.dtype = dtype;
  rec.shape = std::move(shape);
  rec.data = from_f32(values, dtype);
  rec.validate();
  return rec;
}

/// Ordered (lexicographic by name) collection of tensors plus optional
/// string metadata — the in-memory form of a checkpoint.
struct TensorMap {
  std::map<std::string, TensorRecord> tensors;
  std::map<std::string, std::string> metadata;

  void add(TensorRecord rec) {
    rec.validate();
    std::string key = rec.name;
    if (!tensors.emplace(key, std::move(rec)).second)
      throw FormatError("duplicate tensor name \"" + key + "\"");
  }

  std::uint64_t total_elements() const {
    std::uint64_t n = 0;
    for (const auto& [name, rec] : tensors) n += rec.elements();
    return n;
  }

  bool operator==(const TensorMap& other) const {
    if (metadata != other.metadata) return false;
    if (tensors.size() != other.tensors.size()) return false;
    auto it = other.tensors.begin();
    for (const auto& [name, rec] : tensors) {
      const TensorRecord& o = it->second;
      if (name != it->first || rec.dtype != o.dtype || rec.shape != o.shape ||
          rec.data != o.data)
        return false;
      ++it;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Compatibility checking: merging requires identical name sets and, per name,
// identical shape and dtype.
// ---------------------------------------------------------------------------

struct CompatIssue {
  enum class Kind { MissingLeft, MissingRight, ShapeMismatch, DtypeMismatch };
  Kind kind;
  std::string name;
  std::string detail;
};

struct CompatReport {
  std::vector<CompatIssue> issues;

  bool compatible() const { return issues.empty(); }

  std::string to_string() const {
    if (issues.empty()) return "compatible";
    std::ostringstream os;
    for (const CompatIssue& issue : issues) {
      switch (issue.kind) {
        case CompatIssue::Kind::MissingLeft:
          os << "  \"" << issue.name << "\": present only in right model\n";
          break;
        case CompatIssue::Kind::MissingRight:
          os << "  \"" << issue.name << "\": present only in left model\n";
          break;
        case CompatIssue::Kind::ShapeMismatch:
          os << "  \"" << issue.name << "\": shape mismatch " << issue.detail << "\n";
          break;
        case CompatIssue::Kind::DtypeMismatch:
          os << "  \"" << issue.name << "\": dtype mismatch " << issue.detail << "\n";
          break;
      }
    }
    return os.str();
  }
};

inline std::string shape_string(std::span<const std::int64_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline CompatReport validate_compat(const TensorMap& left, const TensorMap& right) {
  CompatReport report;
  for (const auto& [name, lrec] : left.tensors) {
    auto it = right.tensors.find(name);
    if (it == right.tensors.end()) {
      report.issues.push_back({CompatIssue::Kind::MissingRight, name, ""});
      continue;
    }
    const TensorRecord& rrec = it->second;
    if (lrec.shape != rrec.shape)
      report.issues.push_back({CompatIssue::Kind::ShapeMismatch, name,
                               shape_string(lrec.shape) + " vs " + shape_string(rrec.shape)});
    else if (lrec.dtype != rrec.dtype)
      report.issues.push_back({CompatIssue::Kind::DtypeMismatch, name,
                               std::string(dtype_name(lrec.dtype)) + " vs " +
                                   std::string(dtype_name(rrec.dtype))});
  }
  for (const auto& [name, rrec] : right.tensors)
    if (!left.tensors.count(name))
      report.issues.push_back({CompatIssue::Kind::MissingLeft, name, ""});
  return report;
}

}  // namespace ckmerge
