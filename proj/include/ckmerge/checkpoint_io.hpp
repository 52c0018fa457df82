#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "ckmerge/errors.hpp"
#include "ckmerge/tensor_map.hpp"

namespace ckmerge {

// Checkpoint file layout: 8-byte little-endian header length H, then H bytes
// of UTF-8 JSON mapping tensor name -> {dtype, shape, data_offsets}, plus an
// optional "__metadata__" string map, then the concatenated tensor data. Data
// offsets are relative to the end of the header, non-overlapping, and tightly
// ordered (no gaps).

/// Header entry for one tensor; offsets are relative to the data section.
struct TensorInfo {
  std::string name;
  Dtype dtype = Dtype::F32;
  std::vector<std::int64_t> shape;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;

  std::uint64_t bytes() const { return end - begin; }
  std::uint64_t elements() const { return shape_elements(shape); }
};

namespace detail {

inline nlohmann::json parse_header_json(const std::string& text, const std::string& path) {
  std::string duplicate;
  std::set<std::string> seen;
  auto cb = [&](int depth, nlohmann::json::parse_event_t event, nlohmann::json& value) {
    if (event == nlohmann::json::parse_event_t::key && depth == 1) {
      const auto key = value.get<std::string>();
      if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
    }
    return true;
  };
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text, cb);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": header is not valid JSON: " + e.what());
  }
  if (!duplicate.empty())
    throw FormatError(path + ": duplicate tensor name \"" + duplicate + "\" in header");
  if (!header.is_object())
    throw FormatError(path + ": header must be a JSON object");
  return header;
}

}  // namespace detail

/// Parses and validates a checkpoint header, then serves per-tensor data
/// reads. Data stays on disk until asked for.
class CheckpointReader {
 public:
  explicit CheckpointReader(const std::filesystem::path& path)
      : path_(path.string()), file_(path, std::ios::binary) {
    if (!file_) throw IoError("cannot open \"" + path_ + "\" for reading");
    file_.seekg(0, std::ios::end);
    const auto file_size = static_cast<std::uint64_t>(file_.tellg());
    file_.seekg(0);
    if (file_size < 8)
      throw FormatError(path_ + ": file too small for an 8-byte header length");

    std::uint64_t header_len = 0;
    file_.read(reinterpret_cast<char*>(&header_len), 8);
    if (!file_) throw IoError(path_ + ": short read of header length");
    if (header_len > file_size - 8)
      throw FormatError(path_ + ": header length " + std::to_string(header_len) +
                        " exceeds file size " + std::to_string(file_size));

    std::string header_text(header_len, '\0');
    file_.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!file_) throw IoError(path_ + ": short read of header");
    data_begin_ = 8 + header_len;
    data_size_ = file_size - data_begin_;

    const nlohmann::json header = detail::parse_header_json(header_text, path_);
    for (const auto& [key, value] : header.items()) {
      if (key == "__metadata__") {
        if (!value.is_object())
          throw FormatError(path_ + ": __metadata__ must be an object");
        for (const auto& [mk, mv] : value.items()) {
          if (!mv.is_string())
            throw FormatError(path_ + ": __metadata__[\"" + mk + "\"] must be a string");
          metadata_[mk] = mv.get<std::string>();
        }
        continue;
      }
      tensors_.push_back(parse_entry(key, value));
    }
    std::sort(tensors_.begin(), tensors_.end(),
              [](const TensorInfo& a, const TensorInfo& b) { return a.name < b.name; });
    check_coverage();
  }

  const std::string& path() const { return path_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }

  std::vector<std::byte> read_data(const TensorInfo& info) {
    std::vector<std::byte> buf(info.bytes());
    file_.seekg(static_cast<std::streamoff>(data_begin_ + info.begin));
    file_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!file_) throw IoError(path_ + ": short read of tensor \"" + info.name + "\"");
    return buf;
  }

  TensorRecord read_record(const TensorInfo& info) {
    TensorRecord rec;
    rec.name = info.name;
    rec.dtype = info.dtype;
    rec.shape = info.shape;
    rec.data = read_data(info);
    return rec;
  }

 private:
  TensorInfo parse_entry(const std::string& name, const nlohmann::json& value) {
    if (name.empty()) throw FormatError(path_ + ": tensor with empty name");
    if (!value.is_object())
      throw FormatError(path_ + ": entry for \"" + name + "\" must be an object");
    TensorInfo info;
    info.name = name;
    bool have_dtype = false, have_shape = false, have_offsets = false;
    for (const auto& [key, field] : value.items()) {
      if (key == "dtype") {
        if (!field.is_string())
          throw FormatError(path_ + ": \"" + name + "\".dtype must be a string");
        try {
          info.dtype = parse_dtype(field.get<std::string>());
        } catch (const FormatError& e) {
          throw FormatError(path_ + ": \"" + name + "\": " + e.what());
        }
        have_dtype = true;
      } else if (key == "shape") {
        if (!field.is_array())
          throw FormatError(path_ + ": \"" + name + "\".shape must be an array");
        for (const auto& dim : field) {
          if (!dim.is_number_integer() || dim.get<std::int64_t>() < 0)
            throw FormatError(path_ + ": \"" + name + "\".shape has a non-natural dimension");
          info.shape.push_back(dim.get<std::int64_t>());
        }
        have_shape = true;
      } else if (key == "data_offsets") {
        if (!field.is_array() || field.size() != 2 || !field[0].is_number_unsigned() ||
            !field[1].is_number_unsigned())
          throw FormatError(path_ + ": \"" + name +
                            "\".data_offsets must be [begin, end] unsigned integers");
        info.begin = field[0].get<std::uint64_t>();
        info.end = field[1].get<std::uint64_t>();
        have_offsets = true;
      } else {
        throw FormatError(path_ + ": \"" + name + "\" has unknown field \"" + key + "\"");
      }
    }
    if (!have_dtype || !have_shape || !have_offsets)
      throw FormatError(path_ + ": \"" + name + "\" is missing dtype, shape or data_offsets");
    if (info.begin > info.end)
      throw FormatError(path_ + ": \"" + name + "\" has begin > end");
    if (info.end > data_size_)
      throw FormatError(path_ + ": \"" + name + "\" data ends at " + std::to_string(info.end) +
                        " past data size " + std::to_string(data_size_));
    std::uint64_t expected;
    try {
      expected = info.elements() * byte_width(info.dtype);
    } catch (const FormatError& e) {
      throw FormatError(path_ + ": \"" + name + "\": " + e.what());
    }
    if (info.bytes() != expected)
      throw FormatError(path_ + ": \"" + name + "\" spans " + std::to_string(info.bytes()) +
                        " bytes but shape needs " + std::to_string(expected));
    return info;
  }

  void check_coverage() const {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
    std::vector<const TensorInfo*> order;
    for (const TensorInfo& t : tensors_) order.push_back(&t);
    std::sort(order.begin(), order.end(), [](const TensorInfo* a, const TensorInfo* b) {
      return std::pair(a->begin, a->end) < std::pair(b->begin, b->end);
    });
    std::uint64_t cursor = 0;
    for (const TensorInfo* t : order) {
      if (t->begin != cursor)
        throw FormatError(path_ + ": \"" + t->name + "\" begins at " +
                          std::to_string(t->begin) + ", expected " + std::to_string(cursor) +
                          " (offsets must be non-overlapping and tightly ordered)");
      cursor = t->end;
    }
    if (cursor != data_size_)
      throw FormatError(path_ + ": data section holds " + std::to_string(data_size_) +
                        " bytes but offsets cover " + std::to_string(cursor));
  }

  std::string path_;
  std::ifstream file_;
  std::uint64_t data_begin_ = 0;
  std::uint64_t data_size_ = 0;
  std::map<std::string, std::string> metadata_;
  std::vector<TensorInfo> tensors_;
};

/// Streaming checkpoint writer. The full layout (names, dtypes, shapes, and
/// therefore all offsets) is fixed up front so tensors can be written in any
/// order, including concurrently. The emitted bytes depend only on the
/// layout, metadata, and tensor contents.
class CheckpointWriter {
 public:
  CheckpointWriter(const std::filesystem::path& path, std::vector<TensorInfo> layout,
                   const std::map<std::string, std::string>& metadata)
      : path_(path.string()), layout_(std::move(layout)), written_(layout_.size(), false) {
    std::sort(layout_.begin(), layout_.end(),
              [](const TensorInfo& a, const TensorInfo& b) { return a.name < b.name; });
    std::uint64_t offset = 0;
    nlohmann::json header = nlohmann::json::object();  // keys serialize lexicographically
    if (!metadata.empty()) {
      nlohmann::json meta;
      for (const auto& [k, v] : metadata) meta[k] = v;
      header["__metadata__"] = std::move(meta);
    }
    for (TensorInfo& info : layout_) {
      const std::uint64_t bytes = info.elements() * byte_width(info.dtype);
      if (offset > UINT64_MAX - bytes)
        throw FormatError("checkpoint exceeds addressable size at tensor \"" + info.name + "\"");
      info.begin = offset;
      info.end = offset + bytes;
      offset = info.end;
      nlohmann::json entry;
      entry["dtype"] = std::string(dtype_name(info.dtype));
      entry["shape"] = info.shape;
      entry["data_offsets"] = {info.begin, info.end};
      header[info.name] = std::move(entry);
    }
    const std::string header_text = header.dump();
    const std::uint64_t header_len = header_text.size();

    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd_ < 0) throw IoError("cannot open \"" + path_ + "\" for writing");
    data_begin_ = 8 + header_len;
    if (::ftruncate(fd_, static_cast<off_t>(data_begin_ + offset)) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw IoError("cannot size \"" + path_ + "\"");
    }
    write_at(0, &header_len, 8);
    write_at(8, header_text.data(), header_len);
  }

  CheckpointWriter(const CheckpointWriter&) = delete;
  CheckpointWriter& operator=(const CheckpointWriter&) = delete;

  ~CheckpointWriter() {
    if (fd_ >= 0) ::close(fd_);
  }

  const std::vector<TensorInfo>& layout() const { return layout_; }

  /// Thread-safe: distinct indices write to disjoint file ranges.
  void write_tensor(std::size_t index, std::span<const std::byte> bytes) {
    const TensorInfo& info = layout_.at(index);
    if (bytes.size() != info.bytes())
      throw std::logic_error("tensor \"" + info.name + "\": wrong byte count for layout");
    write_at(data_begin_ + info.begin, bytes.data(), bytes.size());
    written_[index] = true;
  }

  void finish() {
    for (std::size_t i = 0; i < layout_.size(); ++i)
      if (!written_[i])
        throw std::logic_error("tensor \"" + layout_[i].name + "\" was never written");
    if (::close(fd_) != 0) {
      fd_ = -1;
      throw IoError("close failed for \"" + path_ + "\"");
    }
    fd_ = -1;
  }

 private:
  void write_at(std::uint64_t offset, const void* data, std::uint64_t size) {
    const char* p = static_cast<const char*>(data);
    while (size > 0) {
      const ssize_t n = ::pwrite(fd_, p, size, static_cast<off_t>(offset));
      if (n <= 0) throw IoError("write failed for \"" + path_ + "\"");
      p += n;
      offset += static_cast<std::uint64_t>(n);
      size -= static_cast<std::uint64_t>(n);
    }
  }

  std::string path_;
  std::vector<TensorInfo> layout_;
  std::vector<char> written_;  // char, not bool: concurrent writers touch distinct elements
  std::uint64_t data_begin_ = 0;
  int fd_ = -1;
};

inline TensorMap read_checkpoint(const std::filesystem::path& path) {
  CheckpointReader reader(path);
  TensorMap map;
  map.metadata = reader.metadata();
  for (const TensorInfo& info : reader.tensors()) map.add(reader.read_record(info));
  return map;
}

inline void write_checkpoint(const TensorMap& map, const std::filesystem::path& path) {
  std::vector<TensorInfo> layout;
  for (const auto& [name, rec] : map.tensors) {
    rec.validate();
    layout.push_back({name, rec.dtype, rec.shape, 0, 0});
  }
  CheckpointWriter writer(path, std::move(layout), map.metadata);
  std::size_t index = 0;
  for (const auto& [name, rec] : map.tensors) writer.write_tensor(index++, rec.data);
  writer.finish();
}

}  // namespace ckmerge
