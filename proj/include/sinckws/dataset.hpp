// Speech Commands ingestion: WAV PCM16 decode/encode, clip conditioning to
// exactly one second, directory-tree manifests with the official split
// lists, silence synthesis from the background-noise files, class weights,
// and deterministic shuffled batch streams.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sinckws/common.hpp"

namespace sinckws {

inline constexpr int kSampleRate = 16000;
inline constexpr int kClipSamples = 16000;
inline constexpr int kMaxRawSamples = 2 * kClipSamples;
inline constexpr int kNumClasses = 12;
inline constexpr int kNumKeywords = 10;
inline constexpr int kUnknownClass = 10;
inline constexpr int kSilenceClass = 11;

using AudioClip = std::vector<float>;

inline const std::array<std::string, kNumClasses>& class_names() {
  static const std::array<std::string, kNumClasses> names = {
      "yes", "no",  "up",   "down", "left",    "right",
      "on",  "off", "stop", "go",   "unknown", "silence"};
  return names;
}

inline int class_id_from_keyword(const std::string& keyword) {
  const auto& names = class_names();
  for (int i = 0; i < kUnknownClass; ++i)
    if (names[static_cast<std::size_t>(i)] == keyword) return i;
  if (keyword == "silence" || keyword == "_silence_") return kSilenceClass;
  return kUnknownClass;
}

// ---- WAV PCM16 mono codec ----

namespace detail {

inline std::uint32_t wav_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t wav_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline AudioClip decode_wav(const std::vector<std::uint8_t>& bytes,
                            const std::string& origin) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw io_error("not a RIFF/WAVE file: " + origin);

  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t chunk = detail::wav_u32(bytes.data() + pos + 4);
    pos += 8;
    if (pos + chunk > bytes.size())
      throw io_error("truncated WAV chunk: " + origin);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (chunk < 16) throw io_error("truncated WAV chunk: " + origin);
      const std::uint16_t codec = detail::wav_u16(bytes.data() + pos);
      const std::uint16_t channels = detail::wav_u16(bytes.data() + pos + 2);
      const std::uint32_t rate = detail::wav_u32(bytes.data() + pos + 4);
      const std::uint16_t bits = detail::wav_u16(bytes.data() + pos + 14);
      if (codec != 1 || bits != 16)
        throw io_error("unsupported WAV codec (16-bit PCM expected): " + origin);
      if (channels != 1) throw io_error("expected mono audio: " + origin);
      if (rate != kSampleRate)
        throw io_error("expected " + std::to_string(kSampleRate) +
                       " Hz sample rate: " + origin);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw io_error("WAV data chunk before fmt chunk: " + origin);
      AudioClip samples(chunk / 2);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(detail::wav_u16(bytes.data() + pos + 2 * i));
        samples[i] = static_cast<float>(raw) / 32768.0f;
      }
      return samples;
    }
    pos += chunk + (chunk & 1);
  }
  throw io_error(have_fmt ? "WAV file has no data chunk: " + origin
                          : "WAV file has no fmt chunk: " + origin);
}

inline std::vector<std::uint8_t> encode_wav(const AudioClip& samples) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  auto u32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto u16 = [&out](std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  auto tag = [&out](const char* t) { out.insert(out.end(), t, t + 4); };

  tag("RIFF");
  u32(36 + data_bytes);
  tag("WAVE");
  tag("fmt ");
  u32(16);
  u16(1);                       // PCM
  u16(1);                       // mono
  u32(kSampleRate);
  u32(kSampleRate * 2);         // byte rate
  u16(2);                       // block align
  u16(16);                      // bits per sample
  tag("data");
  u32(data_bytes);
  for (const float v : samples) {
    const long q = std::lround(static_cast<double>(v) * 32768.0);
    u16(static_cast<std::uint16_t>(
        static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
  }
  return out;
}

inline AudioClip load_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open WAV file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return decode_wav(bytes, path);
}

inline void save_wav(const AudioClip& samples, const std::string& path) {
  const auto bytes = encode_wav(samples);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open WAV file for writing: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw io_error("short write to WAV file: " + path);
}

// Zero-pad symmetrically (extra zero on the right) or center-crop to exactly
// one second.
inline AudioClip condition_clip(const AudioClip& clip) {
  if (clip.empty()) throw io_error("empty audio clip");
  if (clip.size() > static_cast<std::size_t>(kMaxRawSamples))
    throw io_error("audio clip longer than two seconds (" +
                   std::to_string(clip.size()) + " samples)");
  if (clip.size() == static_cast<std::size_t>(kClipSamples)) return clip;
  AudioClip out(static_cast<std::size_t>(kClipSamples), 0.0f);
  if (clip.size() < out.size()) {
    const std::size_t left = (out.size() - clip.size()) / 2;
    std::copy(clip.begin(), clip.end(), out.begin() + static_cast<std::ptrdiff_t>(left));
  } else {
    const std::size_t start = (clip.size() - out.size()) / 2;
    std::copy_n(clip.begin() + static_cast<std::ptrdiff_t>(start), out.size(),
                out.begin());
  }
  return out;
}

// ---- manifest ----

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw io_error("unknown split name: " + s);
}

enum class DatasetVersion { v1, v2 };

inline DatasetVersion version_from_name(const std::string& s) {
  if (s == "v1") return DatasetVersion::v1;
  if (s == "v2") return DatasetVersion::v2;
  throw std::invalid_argument("unknown dataset version: " + s);
}

struct ManifestEntry {
  std::string path;  // relative to the dataset root, forward slashes
  int class_id = 0;
  Split split = Split::train;
};

struct DatasetManifest {
  std::string root;
  std::vector<ManifestEntry> entries;
  std::vector<std::string> noise_files;  // relative paths under the root

  long long count(Split split, int class_id) const {
    long long n = 0;
    for (const auto& e : entries)
      if (e.split == split && e.class_id == class_id) ++n;
    return n;
  }

  long long split_size(Split split) const {
    long long n = 0;
    for (const auto& e : entries)
      if (e.split == split) ++n;
    return n;
  }
};

namespace detail {

inline std::vector<std::string> read_list_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw io_error("missing " + path.filename().string() + " in " +
                          path.parent_path().string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

inline std::vector<std::string> sorted_dir_names(const std::filesystem::path& dir,
                                                 bool directories) {
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file())
      names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace detail

// Scan a Speech Commands tree: keyword folders become labeled entries, the
// official list files fix the val/test membership, everything else trains.
// Silence has no files of its own; it is synthesized from the noise folder.
inline DatasetManifest build_manifest(const std::string& root, DatasetVersion) {
  namespace fs = std::filesystem;
  const fs::path base(root);
  if (!fs::is_directory(base))
    throw io_error("dataset root is not a directory: " + root);

  std::vector<std::string> val_list, test_list;
  val_list = detail::read_list_file(base / "validation_list.txt");
  test_list = detail::read_list_file(base / "testing_list.txt");
  std::sort(val_list.begin(), val_list.end());
  std::sort(test_list.begin(), test_list.end());
  for (const auto& p : val_list)
    if (std::binary_search(test_list.begin(), test_list.end(), p))
      throw io_error("file listed in both validation and testing lists: " + p);

  DatasetManifest manifest;
  manifest.root = root;
  for (const auto& dirname : detail::sorted_dir_names(base, true)) {
    if (dirname == "_background_noise_") {
      for (const auto& fname : detail::sorted_dir_names(base / dirname, false))
        if (fname.size() > 4 && fname.ends_with(".wav"))
          manifest.noise_files.push_back(dirname + "/" + fname);
      continue;
    }
    const int class_id = class_id_from_keyword(dirname);
    for (const auto& fname : detail::sorted_dir_names(base / dirname, false)) {
      if (!(fname.size() > 4 && fname.ends_with(".wav"))) continue;
      ManifestEntry e;
      e.path = dirname + "/" + fname;
      e.class_id = class_id;
      if (std::binary_search(val_list.begin(), val_list.end(), e.path))
        e.split = Split::val;
      else if (std::binary_search(test_list.begin(), test_list.end(), e.path))
        e.split = Split::test;
      else
        e.split = Split::train;
      manifest.entries.push_back(std::move(e));
    }
  }
  if (manifest.entries.empty())
    throw io_error("no keyword directories with WAV files under " + root);
  for (int c = 0; c < kUnknownClass; ++c) {
    long long n = 0;
    for (const auto& e : manifest.entries)
      if (e.class_id == c) ++n;
    if (n == 0)
      throw io_error("no samples for target keyword '" +
                     class_names()[static_cast<std::size_t>(c)] + "' under " + root);
  }
  return manifest;
}

inline void write_manifest_csv(std::ostream& os, const DatasetManifest& manifest) {
  os << "path,label,split\n";
  for (const auto& e : manifest.entries)
    os << e.path << ',' << class_names()[static_cast<std::size_t>(e.class_id)] << ','
       << split_name(e.split) << '\n';
}

// Reads the CSV written above. Noise files are rediscovered from the root's
// noise folder when present, so silence can still be synthesized.
inline DatasetManifest read_manifest_csv(std::istream& is, const std::string& root) {
  DatasetManifest manifest;
  manifest.root = root;
  std::string line;
  if (!std::getline(is, line) || line.rfind("path,label,split", 0) != 0)
    throw io_error("manifest CSV must start with header path,label,split");
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw io_error("malformed manifest CSV line " + std::to_string(lineno));
    ManifestEntry e;
    e.path = line.substr(0, c1);
    const std::string label = line.substr(c1 + 1, c2 - c1 - 1);
    e.class_id = class_id_from_keyword(label);
    if (e.class_id == kUnknownClass && label != "unknown")
      throw io_error("unknown class label '" + label + "' on manifest CSV line " +
                     std::to_string(lineno));
    e.split = split_from_name(line.substr(c2 + 1));
    manifest.entries.push_back(std::move(e));
  }
  namespace fs = std::filesystem;
  const fs::path noise_dir = fs::path(root) / "_background_noise_";
  if (fs::is_directory(noise_dir))
    for (const auto& fname : detail::sorted_dir_names(noise_dir, false))
      if (fname.size() > 4 && fname.ends_with(".wav"))
        manifest.noise_files.push_back(std::string("_background_noise_/") + fname);
  return manifest;
}

inline DatasetManifest load_manifest_csv(const std::string& path, const std::string& root) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open manifest CSV: " + path);
  return read_manifest_csv(is, root);
}

// weight = 1 for the keywords and silence; unknown is scaled so its total
// impact matches an average keyword class. A manifest with no unknown
// samples keeps weight 1 (there is nothing to scale).
inline std::vector<double> class_weights(const DatasetManifest& manifest) {
  std::array<long long, kNumClasses> counts{};
  for (const auto& e : manifest.entries)
    if (e.split == Split::train) counts[static_cast<std::size_t>(e.class_id)] += 1;

  std::vector<double> weights(kNumClasses, 1.0);
  double keyword_total = 0.0;
  for (int c = 0; c < kNumKeywords; ++c)
    keyword_total += static_cast<double>(counts[static_cast<std::size_t>(c)]);
  if (counts[kUnknownClass] > 0) {
    if (keyword_total == 0.0)
      throw io_error("cannot compute class weights: no keyword training samples");
    weights[kUnknownClass] = keyword_total / kNumKeywords /
                             static_cast<double>(counts[kUnknownClass]);
  }
  return weights;
}

// ---- silence synthesis ----

// Uniformly random one-second crop of a uniformly random noise file, scaled
// by a uniform [0,1) amplitude.
class SilenceSynth {
 public:
  SilenceSynth() = default;

  SilenceSynth(const std::string& root, const std::vector<std::string>& noise_files) {
    for (const auto& rel : noise_files) {
      auto samples = load_wav((std::filesystem::path(root) / rel).string());
      if (samples.size() < static_cast<std::size_t>(kClipSamples))
        throw io_error("noise file shorter than one second: " + rel);
      noise_.push_back(std::move(samples));
    }
  }

  bool empty() const { return noise_.empty(); }

  AudioClip sample(Rng& rng) const {
    if (noise_.empty())
      throw io_error("silence synthesis requires background noise files");
    const auto& src = noise_[static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::uint64_t>(noise_.size())))];
    const auto offset = static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::uint64_t>(src.size() - kClipSamples + 1)));
    const auto scale = static_cast<float>(rng.uniform());
    AudioClip clip(static_cast<std::size_t>(kClipSamples));
    for (int i = 0; i < kClipSamples; ++i)
      clip[static_cast<std::size_t>(i)] = src[offset + static_cast<std::size_t>(i)] * scale;
    return clip;
  }

 private:
  std::vector<AudioClip> noise_;
};

// ---- batch streaming ----

struct Batch {
  std::vector<AudioClip> clips;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

// One epoch: a shuffled pass over every entry of the split, topped up with
// synthesized silence at the given fraction of the total yield. Splits that
// already carry explicit silence entries are not topped up. Order and crops
// are fully determined by the seed.
class BatchStream {
 public:
  BatchStream(const DatasetManifest& manifest, Split split, int batch_size,
              double silence_fraction, std::uint64_t seed)
      : manifest_(&manifest), batch_size_(batch_size), rng_(seed) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (silence_fraction < 0.0 || silence_fraction >= 1.0)
      throw std::invalid_argument("silence fraction must be in [0, 1)");

    bool split_has_silence = false;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
      if (manifest.entries[i].split != split) continue;
      order_.push_back(static_cast<long>(i));
      split_has_silence |= manifest.entries[i].class_id == kSilenceClass;
    }
    if (order_.empty())
      throw io_error(std::string("split has no samples: ") + split_name(split));

    if (!split_has_silence && silence_fraction > 0.0) {
      const auto n = static_cast<double>(order_.size());
      const auto n_sil = static_cast<long>(
          std::llround(n * silence_fraction / (1.0 - silence_fraction)));
      if (n_sil > 0) {
        synth_ = SilenceSynth(manifest.root, manifest.noise_files);
        order_.insert(order_.end(), static_cast<std::size_t>(n_sil), -1L);
      }
    }
    rng_.shuffle(order_);
  }

  std::size_t total() const { return order_.size(); }

  bool next(Batch& out) {
    out.clips.clear();
    out.labels.clear();
    if (pos_ >= order_.size()) return false;
    while (pos_ < order_.size() && out.size() < static_cast<std::size_t>(batch_size_)) {
      const long idx = order_[pos_++];
      if (idx < 0) {
        out.clips.push_back(synth_.sample(rng_));
        out.labels.push_back(kSilenceClass);
      } else {
        const auto& e = manifest_->entries[static_cast<std::size_t>(idx)];
        const auto path = (std::filesystem::path(manifest_->root) / e.path).string();
        out.clips.push_back(condition_clip(load_wav(path)));
        out.labels.push_back(e.class_id);
      }
    }
    return true;
  }

 private:
  const DatasetManifest* manifest_;
  int batch_size_;
  Rng rng_;
  std::vector<long> order_;
  std::size_t pos_ = 0;
  SilenceSynth synth_;
};

}  // namespace sinckws
