// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/safetensors.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "cba/error.hpp"

namespace cba::safetensors {

using ojson = nlohmann::ordered_json;

std::int64_t TensorRecord::element_count() const {
    std::int64_t n = 1;
    for (const auto d : shape) n *= d;
    return n;
}

const TensorRecord* File::find(std::string_view name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

std::vector<std::uint8_t> serialize(const File& file) {
    ojson header = ojson::object();
    if (!file.metadata.empty()) {
        header["__metadata__"] = file.metadata;
    }
    std::set<std::string> seen;
    std::uint64_t offset = 0;
    for (const auto& t : file.tensors) {
        if (!seen.insert(t.name).second) {
            throw FormatError("duplicate tensor name '" + t.name + "'");
        }
        const auto expected = static_cast<std::uint64_t>(t.element_count()) * dtype_width(t.dtype);
        if (t.data.size() != expected) {
            throw ShapeError("tensor '" + t.name + "' payload does not match its shape");
        }
        header[t.name] = {{"dtype", safetensors_dtype_tag(t.dtype)},
                          {"shape", t.shape},
                          {"data_offsets", {offset, offset + t.data.size()}}};
        offset += t.data.size();
    }
    std::string text = header.dump();
    // Pad with spaces so the payload starts 8-byte aligned.
    while ((text.size() % 8) != 0) text.push_back(' ');

    std::vector<std::uint8_t> out;
    out.reserve(8 + text.size() + offset);
    const std::uint64_t n = text.size();
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(n >> (8 * b)));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& t : file.tensors) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
}

File parse(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) {
        throw FormatError("safetensors file shorter than its 8-byte header length");
    }
    std::uint64_t header_len = 0;
    for (int b = 0; b < 8; ++b) header_len |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    if (header_len > bytes.size() - 8) {
        throw FormatError("safetensors header length " + std::to_string(header_len) + " exceeds file size");
    }
    const std::string text(reinterpret_cast<const char*>(bytes.data() + 8), header_len);

    // nlohmann keeps the last of duplicate keys silently, so catch them while parsing.
    std::set<std::string> top_keys;
    std::string duplicate;
    ojson::parser_callback_t on_event = [&](int depth, ojson::parse_event_t event, ojson& parsed) {
        if (depth == 1 && event == ojson::parse_event_t::key) {
            const auto key = parsed.get<std::string>();
            if (!top_keys.insert(key).second && duplicate.empty()) duplicate = key;
        }
        return true;
    };
    ojson header;
    try {
        header = ojson::parse(text, on_event);
    } catch (const ojson::parse_error& e) {
        throw FormatError(std::string("malformed safetensors header: ") + e.what());
    }
    if (!duplicate.empty()) {
        throw FormatError("duplicate tensor name '" + duplicate + "'");
    }
    if (!header.is_object()) {
        throw FormatError("safetensors header is not a JSON object");
    }

    const auto payload = bytes.subspan(8 + header_len);
    File file;
    struct Span {
        std::uint64_t begin, end;
        std::string name;
    };
    std::vector<Span> spans;
    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            file.metadata = entry;
            continue;
        }
        try {
            TensorRecord t;
            t.name = name;
            t.dtype = parse_dtype(entry.at("dtype").get<std::string>());
            t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
            const auto offs = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
            if (offs.size() != 2 || offs[0] > offs[1] || offs[1] > payload.size()) {
                throw FormatError("tensor '" + name + "' has out-of-range data_offsets");
            }
            if (std::any_of(t.shape.begin(), t.shape.end(), [](auto d) { return d < 0; })) {
                throw FormatError("tensor '" + name + "' has a negative dimension");
            }
            const auto expected = static_cast<std::uint64_t>(t.element_count()) * dtype_width(t.dtype);
            if (offs[1] - offs[0] != expected) {
                throw ShapeError("tensor '" + name + "' byte span does not match shape and dtype");
            }
            t.data.assign(payload.begin() + static_cast<std::ptrdiff_t>(offs[0]),
                          payload.begin() + static_cast<std::ptrdiff_t>(offs[1]));
            spans.push_back({offs[0], offs[1], name});
            file.tensors.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("tensor '" + name + "' header entry is malformed: " + e.what());
        }
    }
    std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i].begin < spans[i - 1].end) {
            throw FormatError("tensors '" + spans[i - 1].name + "' and '" + spans[i].name + "' overlap");
        }
    }
    // Report tensors in payload order regardless of header key order.
    std::stable_sort(file.tensors.begin(), file.tensors.end(), [&](const TensorRecord& a, const TensorRecord& b) {
        auto pos = [&](const std::string& n) {
            return std::find_if(spans.begin(), spans.end(), [&](const Span& s) { return s.name == n; })->begin;
        };
        return pos(a.name) < pos(b.name);
    });
    return file;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_file(const std::filesystem::path& path, const File& file) {
    write_bytes(path, serialize(file));
}

File read_file(const std::filesystem::path& path) {
    return parse(read_bytes(path));
}

}  // namespace cba::safetensors
