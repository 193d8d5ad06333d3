#pragma once

// PLW: weight container for a whole ParameterStore.
//   8-byte magic "PLW1" padded with four NUL bytes,
//   a UTF-8 manifest, one record per line:
//     name dtype_tag extent0,extent1,... byte_offset byte_length trainable
//   a blank line terminating the manifest,
//   the concatenated little-endian value blob (offsets relative to its start).
// Round-trips are bit-exact, including moving statistics and trainable flags.

#include <fstream>
#include <sstream>
#include <string>

#include "pattlite/model.hpp"
#include "pattlite/tensor_io.hpp"

namespace pattlite {

namespace detail {

inline constexpr char kPlwMagic[8] = {'P', 'L', 'W', '1', 0, 0, 0, 0};

}  // namespace detail

template <class Scalar>
void save_weights(const Model<Scalar>& model, std::ostream& os) {
    os.write(detail::kPlwMagic, 8);
    std::uint64_t offset = 0;
    for (const auto& entry : model.params.entries()) {
        const std::uint64_t bytes =
            static_cast<std::uint64_t>(entry.value.size()) * sizeof(Scalar);
        os << entry.name << ' ' << int(detail::dtype_tag<Scalar>()) << ' ';
        for (int a = 0; a < entry.value.rank(); ++a) {
            if (a) os << ',';
            os << entry.value.extent(a);
        }
        os << ' ' << offset << ' ' << bytes << ' ' << (entry.trainable ? 1 : 0) << '\n';
        offset += bytes;
    }
    os << '\n';
    for (const auto& entry : model.params.entries())
        os.write(reinterpret_cast<const char*>(entry.value.data()),
                 static_cast<std::streamsize>(entry.value.size() * static_cast<Index>(sizeof(Scalar))));
    if (!os) throw DataError("PLW: write failed");
}

template <class Scalar>
void save_weights(const Model<Scalar>& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("PLW: cannot open for writing: " + path);
    save_weights(model, os);
}

// Loads into an already-built model; every manifest entry must match the
// store by name and shape, and vice versa.
template <class Scalar>
void load_weights(Model<Scalar>& model, std::istream& is, const std::string& origin = "<stream>") {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, detail::kPlwMagic, 8) != 0)
        throw DataError("PLW: bad magic in " + origin);

    struct Record {
        std::string name;
        std::vector<int> shape;
        std::uint64_t offset = 0, bytes = 0;
        bool trainable = false;
    };
    std::vector<Record> records;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) break;
        std::istringstream ls(line);
        Record r;
        int dtype = -1;
        std::string shape_field;
        std::uint64_t trainable = 0;
        if (!(ls >> r.name >> dtype >> shape_field >> r.offset >> r.bytes >> trainable))
            throw DataError("PLW: malformed manifest line in " + origin + ": " + line);
        if (dtype != int(detail::dtype_tag<Scalar>()))
            throw DataError("PLW: dtype mismatch for " + r.name + " in " + origin);
        std::istringstream ss(shape_field);
        std::string ext;
        while (std::getline(ss, ext, ',')) r.shape.push_back(std::stoi(ext));
        r.trainable = trainable != 0;
        records.push_back(std::move(r));
    }

    // Manifest and store must agree exactly.
    if (records.size() != model.params.size())
        throw DataError("PLW: manifest lists " + std::to_string(records.size()) +
                        " entries, model has " + std::to_string(model.params.size()) + " (" +
                        origin + ")");
    for (const auto& r : records) {
        if (!model.params.has(r.name))
            throw DataError("PLW: manifest entry not in model: " + r.name + " (" + origin + ")");
        const auto& entry = model.params.at(r.name);
        if (entry.value.shape() != r.shape)
            throw DataError("PLW: shape conflict for " + r.name + ": file " +
                            Tensor<Scalar>(r.shape).shape_string() + " vs model " +
                            entry.value.shape_string() + " (" + origin + ")");
        if (r.bytes != static_cast<std::uint64_t>(entry.value.size()) * sizeof(Scalar))
            throw DataError("PLW: byte length conflict for " + r.name + " (" + origin + ")");
    }

    const std::streampos blob_start = is.tellg();
    for (const auto& r : records) {
        auto& entry = model.params.at(r.name);
        is.seekg(blob_start + static_cast<std::streamoff>(r.offset));
        if (!is.read(reinterpret_cast<char*>(entry.value.data()),
                     static_cast<std::streamsize>(r.bytes)))
            throw DataError("PLW: truncated blob while reading " + r.name + " (" + origin + ")");
        entry.trainable = r.trainable;
    }
}

template <class Scalar>
void load_weights(Model<Scalar>& model, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("PLW: cannot open: " + path);
    load_weights(model, is, path);
}

// In-memory snapshot used by early stopping; same encoding as the on-disk
// container so restoration exercises the identical code path.
template <class Scalar>
std::string snapshot_weights(const Model<Scalar>& model) {
    std::ostringstream os(std::ios::binary);
    save_weights(model, os);
    return os.str();
}

template <class Scalar>
void restore_weights(Model<Scalar>& model, const std::string& snapshot) {
    std::istringstream is(snapshot, std::ios::binary);
    load_weights(model, is, "<snapshot>");
}

}  // namespace pattlite
