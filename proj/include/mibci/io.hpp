#pragma once

// File formats: EEGS binary streams, ground-truth sidecars, and JSON model
// bundles and session logs with base64 float64 matrix blobs.

#include <mibci/pipeline.hpp>

#include <json.hpp>

#include <filesystem>
#include <string>

namespace mibci::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr std::uint16_t kEegVersion = 1;

/// Writes "EEGS", u16 version, u32 fs, u16 channel count, the channel names
/// (u16 byte length + bytes each), then frame-major float32 samples. All
/// integers and floats are little-endian. fs must be a whole number of Hz.
void write_eeg(const fs::path& path, const synth::EegStream& stream);
synth::EegStream read_eeg(const fs::path& path);

/// Bytes of the EEGS header for a channel-name table.
std::size_t eeg_header_size(const std::vector<std::string>& channel_names);

struct TruthFile {
    int version = pipeline::kFormatVersion;
    std::string config_hash;
    synth::GroundTruth truth;
};

/// Ground-truth sidecar; per-frame phases are stored as run-length segments.
json truth_to_json(const synth::GroundTruth& truth, const std::string& config_hash);
TruthFile truth_from_json(const json& j);

// Base64 (RFC 4648) of little-endian float64 values.
std::string encode_doubles(std::span<const double> values);
std::vector<double> decode_doubles(const std::string& text);

/// {"rows", "cols", "data"} with row-major float64 data.
json matrix_to_json(const spd::Matrix& m);
spd::Matrix matrix_from_json(const json& j);

/// Values plus the cached eigensystem, so a loaded matrix scores exactly
/// like the saved one.
json spd_to_json(const spd::SpdMatrix& s);
spd::SpdMatrix spd_from_json(const json& j);

json bundle_to_json(const pipeline::ModelBundle& b);
pipeline::ModelBundle bundle_from_json(const json& j);

json session_log_to_json(const pipeline::SessionLog& log);
pipeline::SessionLog session_log_from_json(const json& j);

/// Throws Version when the document's version differs from kFormatVersion.
void check_version(const json& j, const std::string& what);

/// Deterministic text form: sorted keys, 2-space indent, trailing newline.
std::string dump(const json& j);

json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& j);
void write_text(const fs::path& path, const std::string& text);

void save_bundle(const fs::path& path, const pipeline::ModelBundle& b);
pipeline::ModelBundle load_bundle(const fs::path& path);
void save_session_log(const fs::path& path, const pipeline::SessionLog& log);
pipeline::SessionLog load_session_log(const fs::path& path);
void save_truth(const fs::path& path, const synth::GroundTruth& truth, const std::string& config_hash);
TruthFile load_truth(const fs::path& path);

} // namespace mibci::io
