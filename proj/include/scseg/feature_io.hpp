#pragma once

#include <string>

#include "scseg/segmenter.hpp"

namespace scseg {

/// Feature-stack file, magic "FTS1": little-endian u32 layer count, then per
/// layer u32 rows and u32 cols, then the layers' float32 little-endian
/// row-major payloads in order. Values round-trip bit-exactly when they are
/// representable in float32 (everything the synthesizer emits is). Bad magic,
/// truncation, trailing bytes and dimension overflow throw FormatError with
/// the offending byte offset.
LayerStack read_features(const std::string& path);
void write_features(const std::string& path, const LayerStack& stack);

/// In-memory forms used by the round-trip tests.
LayerStack decode_features(const std::string& bytes);
std::string encode_features(const LayerStack& stack);

/// Binary masks as 8-bit PGM (P5, maxval 255); foreground pixels are written
/// as 255, background as 0. Reading maps values >= 128 to 1.
Grid read_mask_pgm(const std::string& path);
void write_mask_pgm(const std::string& path, const Grid& mask);

Grid decode_mask_pgm(const std::string& bytes);
std::string encode_mask_pgm(const Grid& mask);

/// Episode directory: episode.cfg manifest, query.fts, truth.pgm, and per
/// support s<ID>.fts, s<ID>_mask.pgm, s<ID>_mask_l<layer>.pgm.
void write_episode(const std::string& dir, const Episode& ep);
Episode read_episode(const std::string& dir);

} // namespace scseg
