#include "compress/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace compress {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::ZeroNormRow: return "ZeroNormRow";
    case Errc::NonFinite: return "NonFinite";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::NonPositiveTemperature: return "NonPositiveTemperature";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::InvalidCapacity: return "InvalidCapacity";
    case Errc::UnnormalizedBatch: return "UnnormalizedBatch";
    case Errc::EmptyQueue: return "EmptyQueue";
    case Errc::EmptyAnchors: return "EmptyAnchors";
    case Errc::StaleCache: return "StaleCache";
    case Errc::InconsistentInputs: return "InconsistentInputs";
    case Errc::BankSmallerThanBatch: return "BankSmallerThanBatch";
    case Errc::BatchTooSmall: return "BatchTooSmall";
    case Errc::KTooLarge: return "KTooLarge";
    case Errc::EmptyTrainSet: return "EmptyTrainSet";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::SizeMismatch: return "SizeMismatch";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

namespace binary {

void Writer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot open " + path.string() + " for writing");
  out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw Error(Errc::Io, "write failed for " + path.string());
}

Reader::Reader(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void Reader::require(std::size_t n) const {
  if (remaining() < n) throw Error(Errc::TruncatedFile, "need " + std::to_string(n) + " more bytes, have " +
                                                            std::to_string(remaining()));
}

void Reader::expect_magic(std::string_view magic) {
  require(magic.size());
  if (std::string_view(buf_.data() + pos_, magic.size()) != magic)
    throw Error(Errc::BadMagic, "expected magic " + std::string(magic));
  pos_ += magic.size();
}

std::uint8_t Reader::u8() {
  require(1);
  return static_cast<std::uint8_t>(buf_[pos_++]);
}

std::uint32_t Reader::u32() {
  require(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

void Reader::expect_end() const {
  if (remaining() != 0) throw Error(Errc::SizeMismatch, std::to_string(remaining()) + " trailing bytes");
}

}  // namespace binary
}  // namespace compress
