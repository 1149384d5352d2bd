#pragma once

// EDF (European Data Format) reader/writer.
//
// Layout: 256-byte fixed header, then 256 bytes of per-signal header fields
// (each field stored as an array over all signals), then data records of
// 16-bit little-endian two's-complement samples grouped per signal.
// Physical units are recovered with the EDF linear map
//   phys = (dig - dig_min) * (phys_max - phys_min) / (dig_max - dig_min) + phys_min.
//
// Annotation signals ("EDF Annotations") are skipped; seizure times come from
// a sidecar text file (see recording.hpp).

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "spikedet/errors.hpp"
#include "spikedet/recording.hpp"

namespace spikedet {

namespace edf_detail {

constexpr std::size_t kFixedHeader = 256;
constexpr std::size_t kPerSignalHeader = 256;
constexpr const char* kAnnotationsLabel = "EDF Annotations";

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::string field(const std::vector<std::uint8_t>& bytes, std::size_t off, std::size_t len) {
    return std::string(reinterpret_cast<const char*>(bytes.data()) + off, len);
}

inline long parse_int(const std::vector<std::uint8_t>& bytes, std::size_t off, std::size_t len,
                      const char* what) {
    const std::string raw = trim(field(bytes, off, len));
    if (raw.empty())
        throw EdfError(EdfError::Kind::malformed_numeric_field,
                       off, std::string("empty numeric field: ") + what);
    char* end = nullptr;
    const long v = std::strtol(raw.c_str(), &end, 10);
    if (end == raw.c_str() || *end != '\0')
        throw EdfError(EdfError::Kind::malformed_numeric_field,
                       off, std::string("malformed integer field: ") + what + " = '" + raw + "'");
    return v;
}

inline double parse_double(const std::vector<std::uint8_t>& bytes, std::size_t off, std::size_t len,
                           const char* what) {
    const std::string raw = trim(field(bytes, off, len));
    if (raw.empty())
        throw EdfError(EdfError::Kind::malformed_numeric_field,
                       off, std::string("empty numeric field: ") + what);
    char* end = nullptr;
    const double v = std::strtod(raw.c_str(), &end);
    if (end == raw.c_str() || *end != '\0')
        throw EdfError(EdfError::Kind::malformed_numeric_field,
                       off, std::string("malformed float field: ") + what + " = '" + raw + "'");
    return v;
}

// Fixed-width, left-justified, space-padded ASCII as EDF headers require.
inline void put_field(std::vector<std::uint8_t>& out, const std::string& value, std::size_t len) {
    std::string v = value;
    if (v.size() > len) v.resize(len);
    v.resize(len, ' ');
    out.insert(out.end(), v.begin(), v.end());
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.8g", v);
    if (std::strlen(buf) > 8) std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

}  // namespace edf_detail

inline Recording parse_edf(const std::vector<std::uint8_t>& bytes) {
    using namespace edf_detail;
    if (bytes.size() < kFixedHeader)
        throw EdfError(EdfError::Kind::truncated_header, bytes.size(),
                       "fixed header requires 256 bytes, got " + std::to_string(bytes.size()));

    const long n_records_declared = parse_int(bytes, 236, 8, "number of data records");
    const double record_duration = parse_double(bytes, 244, 8, "data record duration");
    const long ns = parse_int(bytes, 252, 4, "number of signals");
    if (ns <= 0)
        throw EdfError(EdfError::Kind::malformed_numeric_field, 252, "number of signals must be positive");

    const std::size_t header_bytes = kFixedHeader + static_cast<std::size_t>(ns) * kPerSignalHeader;
    if (bytes.size() < header_bytes)
        throw EdfError(EdfError::Kind::truncated_header, bytes.size(),
                       "signal headers require " + std::to_string(header_bytes) + " bytes");

    const std::size_t nsz = static_cast<std::size_t>(ns);
    // Per-signal header fields are stored as arrays over all signals; these
    // are each field's cumulative byte offset within one signal's 256 bytes.
    constexpr std::size_t kLabel = 0, kPhysMin = 104, kPhysMax = 112, kDigMin = 120,
                          kDigMax = 128, kSamplesPerRecord = 216;
    auto sig_off = [&](std::size_t field_base, std::size_t width, std::size_t i) {
        return kFixedHeader + field_base * nsz + width * i;
    };

    std::vector<std::string> labels(nsz);
    std::vector<double> phys_min(nsz), phys_max(nsz);
    std::vector<long> dig_min(nsz), dig_max(nsz), spr(nsz);
    for (std::size_t i = 0; i < nsz; ++i) {
        labels[i] = trim(field(bytes, sig_off(kLabel, 16, i), 16));
        phys_min[i] = parse_double(bytes, sig_off(kPhysMin, 8, i), 8, "physical minimum");
        phys_max[i] = parse_double(bytes, sig_off(kPhysMax, 8, i), 8, "physical maximum");
        dig_min[i] = parse_int(bytes, sig_off(kDigMin, 8, i), 8, "digital minimum");
        dig_max[i] = parse_int(bytes, sig_off(kDigMax, 8, i), 8, "digital maximum");
        spr[i] = parse_int(bytes, sig_off(kSamplesPerRecord, 8, i), 8, "samples per record");
        if (spr[i] <= 0)
            throw EdfError(EdfError::Kind::malformed_numeric_field,
                           sig_off(kSamplesPerRecord, 8, i), "samples per record must be positive");
        if (dig_max[i] == dig_min[i])
            throw EdfError(EdfError::Kind::malformed_numeric_field, sig_off(kDigMin, 8, i),
                           "digital range is empty (dig_min == dig_max)");
    }
    if (record_duration <= 0)
        throw EdfError(EdfError::Kind::malformed_numeric_field, 244, "record duration must be positive");

    // Data signals only; annotation channels are layout placeholders.
    std::vector<bool> is_data(nsz);
    long data_spr = -1;
    for (std::size_t i = 0; i < nsz; ++i) {
        is_data[i] = labels[i] != kAnnotationsLabel;
        if (!is_data[i]) continue;
        if (data_spr < 0) data_spr = spr[i];
        if (spr[i] != data_spr)
            throw EdfError(EdfError::Kind::inconsistent_record_count,
                           sig_off(kSamplesPerRecord, 8, i),
                           "mixed per-signal sampling rates are not supported");
    }
    if (data_spr < 0)
        throw EdfError(EdfError::Kind::inconsistent_record_count, 252, "no data signals present");

    std::size_t record_bytes = 0;
    for (std::size_t i = 0; i < nsz; ++i) record_bytes += 2u * static_cast<std::size_t>(spr[i]);
    const std::size_t payload = bytes.size() - header_bytes;

    std::size_t n_records;
    if (n_records_declared >= 0) {
        n_records = static_cast<std::size_t>(n_records_declared);
        if (payload != n_records * record_bytes)
            throw EdfError(EdfError::Kind::inconsistent_record_count, 236,
                           "payload holds " + std::to_string(payload) + " bytes, header declares " +
                               std::to_string(n_records * record_bytes));
    } else {
        if (record_bytes == 0 || payload % record_bytes != 0)
            throw EdfError(EdfError::Kind::inconsistent_record_count, 236,
                           "payload is not a whole number of data records");
        n_records = payload / record_bytes;
    }

    Recording rec;
    rec.sample_rate_hz = static_cast<double>(data_spr) / record_duration;
    for (std::size_t i = 0; i < nsz; ++i) {
        if (!is_data[i]) continue;
        rec.channel_labels.push_back(labels[i]);
        rec.data.emplace_back();
        rec.data.back().reserve(n_records * static_cast<std::size_t>(spr[i]));
        rec.ranges.push_back({phys_min[i], phys_max[i], static_cast<int>(dig_min[i]),
                              static_cast<int>(dig_max[i])});
    }

    std::size_t pos = header_bytes;
    for (std::size_t r = 0; r < n_records; ++r) {
        std::size_t out_ch = 0;
        for (std::size_t i = 0; i < nsz; ++i) {
            const std::size_t n = static_cast<std::size_t>(spr[i]);
            if (!is_data[i]) {
                pos += 2u * n;
                continue;
            }
            auto& series = rec.data[out_ch];
            const double gain = (phys_max[i] - phys_min[i]) /
                                static_cast<double>(dig_max[i] - dig_min[i]);
            for (std::size_t k = 0; k < n; ++k) {
                const std::int16_t dig = static_cast<std::int16_t>(
                    static_cast<std::uint16_t>(bytes[pos]) |
                    (static_cast<std::uint16_t>(bytes[pos + 1]) << 8));
                pos += 2;
                series.push_back((static_cast<double>(dig) - static_cast<double>(dig_min[i])) * gain +
                                 phys_min[i]);
            }
            ++out_ch;
        }
    }
    return rec;
}

// Serialize a recording to EDF. Channels carrying explicit ranges reuse them
// (this is what makes parse -> write round trips digitally exact); otherwise a
// symmetric physical range is derived from the data.
inline std::vector<std::uint8_t> write_edf(const Recording& rec) {
    using namespace edf_detail;
    if (rec.n_channels() == 0) throw std::invalid_argument("cannot write EDF with no channels");
    validate_recording(rec);

    const std::size_t nsz = rec.n_channels();
    const std::size_t total = rec.n_samples();
    if (total == 0) throw std::invalid_argument("cannot write EDF with no samples");

    // One-second records when the rate is integral and divides the length,
    // otherwise a single record spanning the whole recording.
    std::size_t spr;
    double record_duration;
    const double rate = rec.sample_rate_hz;
    const bool integral_rate = std::abs(rate - std::round(rate)) < 1e-9;
    if (integral_rate && total % static_cast<std::size_t>(std::llround(rate)) == 0) {
        spr = static_cast<std::size_t>(std::llround(rate));
        record_duration = 1.0;
    } else {
        spr = total;
        record_duration = static_cast<double>(total) / rate;
    }
    const std::size_t n_records = total / spr;

    std::vector<Recording::ChannelRange> ranges = rec.ranges;
    if (ranges.size() != nsz) {
        ranges.clear();
        for (std::size_t c = 0; c < nsz; ++c) {
            double peak = 1.0;
            for (double v : rec.data[c]) peak = std::max(peak, std::abs(v));
            peak = std::ceil(peak * 1.05);
            ranges.push_back({-peak, peak, -32768, 32767});
        }
    }

    for (std::size_t c = 0; c < nsz; ++c) {
        for (std::size_t k = 0; k < total; ++k) {
            const double v = rec.data[c][k];
            if (v < ranges[c].phys_min || v > ranges[c].phys_max)
                throw UnrepresentableAmplitude(
                    c, v,
                    "sample " + std::to_string(v) + " uV outside declared range [" +
                        std::to_string(ranges[c].phys_min) + ", " +
                        std::to_string(ranges[c].phys_max) + "] on channel " + std::to_string(c));
        }
    }

    std::vector<std::uint8_t> out;
    out.reserve(kFixedHeader + nsz * kPerSignalHeader + n_records * nsz * spr * 2);

    put_field(out, "0", 8);                                   // version
    put_field(out, "X X X X", 80);                            // patient id
    put_field(out, "Startdate X X X X", 80);                  // recording id
    put_field(out, "01.01.00", 8);                            // start date (fixed for determinism)
    put_field(out, "00.00.00", 8);                            // start time
    put_field(out, std::to_string(kFixedHeader + nsz * kPerSignalHeader), 8);
    put_field(out, "", 44);
    put_field(out, std::to_string(n_records), 8);
    put_field(out, format_double(record_duration), 8);
    put_field(out, std::to_string(nsz), 4);

    for (std::size_t c = 0; c < nsz; ++c) put_field(out, rec.channel_labels[c], 16);
    for (std::size_t c = 0; c < nsz; ++c) put_field(out, "", 80);   // transducer
    for (std::size_t c = 0; c < nsz; ++c) put_field(out, "uV", 8);  // physical dimension
    for (std::size_t c = 0; c < nsz; ++c) put_field(out, format_double(ranges[c].phys_min), 8);
    for (std::size_t c = 0; c < nsz; ++c) put_field(out, format_double(ranges[c].phys_max), 8);
    for (std::size_t c = 0; c < nsz; ++c) put_field(out, std::to_string(ranges[c].dig_min), 8);
    for (std::size_t c = 0; c < nsz; ++c) put_field(out, std::to_string(ranges[c].dig_max), 8);
    for (std::size_t c = 0; c < nsz; ++c) put_field(out, "", 80);  // prefiltering
    for (std::size_t c = 0; c < nsz; ++c) put_field(out, std::to_string(spr), 8);
    for (std::size_t c = 0; c < nsz; ++c) put_field(out, "", 32);

    for (std::size_t r = 0; r < n_records; ++r) {
        for (std::size_t c = 0; c < nsz; ++c) {
            const double gain = static_cast<double>(ranges[c].dig_max - ranges[c].dig_min) /
                                (ranges[c].phys_max - ranges[c].phys_min);
            for (std::size_t k = 0; k < spr; ++k) {
                const double v = rec.data[c][r * spr + k];
                long dig = std::lround((v - ranges[c].phys_min) * gain) + ranges[c].dig_min;
                dig = std::min<long>(ranges[c].dig_max, std::max<long>(ranges[c].dig_min, dig));
                const auto u = static_cast<std::uint16_t>(static_cast<std::int16_t>(dig));
                out.push_back(static_cast<std::uint8_t>(u & 0xff));
                out.push_back(static_cast<std::uint8_t>(u >> 8));
            }
        }
    }
    return out;
}

}  // namespace spikedet
