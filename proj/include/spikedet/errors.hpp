#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spikedet {

// EDF container problems carry the byte offset of the offending field.
class EdfError : public std::runtime_error {
public:
    enum class Kind {
        truncated_header,
        malformed_numeric_field,
        inconsistent_record_count,
    };

    EdfError(Kind kind, std::size_t offset, const std::string& msg)
        : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
          kind_(kind),
          offset_(offset) {}

    Kind kind() const { return kind_; }
    std::size_t offset() const { return offset_; }

private:
    Kind kind_;
    std::size_t offset_;
};

class UnrepresentableAmplitude : public std::runtime_error {
public:
    UnrepresentableAmplitude(std::size_t channel, double value, const std::string& msg)
        : std::runtime_error(msg), channel_(channel), value_(value) {}
    std::size_t channel() const { return channel_; }
    double value() const { return value_; }

private:
    std::size_t channel_;
    double value_;
};

class InvalidBand : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class UnknownChannel : public std::invalid_argument {
public:
    explicit UnknownChannel(const std::string& label)
        : std::invalid_argument("unknown channel: " + label), label_(label) {}
    const std::string& label() const { return label_; }

private:
    std::string label_;
};

class NonFiniteSample : public std::invalid_argument {
public:
    NonFiniteSample(std::size_t channel, std::size_t index)
        : std::invalid_argument("non-finite sample at channel " + std::to_string(channel) +
                                ", index " + std::to_string(index)) {}
};

// Raised when a network/pipeline configuration violates a stated bound.
class ConfigViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ShapeMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(int epoch, int batch)
        : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch)),
          epoch_(epoch),
          batch_(batch) {}
    int epoch() const { return epoch_; }
    int batch() const { return batch_; }

private:
    int epoch_;
    int batch_;
};

}  // namespace spikedet
