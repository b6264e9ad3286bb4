#include "siri/errors.hpp"
#include "siri/util.hpp"

#include <doctest.h>

#include <filesystem>

using namespace siri;

TEST_CASE("trim and split_lines") {
    CHECK(trim("  a b \n") == "a b");
    CHECK(trim_right("  a \t") == "  a");
    CHECK(trim("") == "");
    CHECK(to_lower("MiXeD") == "mixed");
    CHECK(split_lines("a\r\nb\n\nc") == std::vector<std::string>{"a", "b", "", "c"});
}

TEST_CASE("sha256 matches the published test vector") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("base64 round trip") {
    CHECK(base64_encode("hello") == "aGVsbG8=");
    CHECK(base64_decode("aGVsbG8=") == "hello");
    std::string bytes;
    for (int i = 0; i < 256; ++i) bytes.push_back(static_cast<char>(i));
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
    CHECK_THROWS_AS(base64_decode("@@@"), SchemaError);
}

TEST_CASE("format_score drops trailing zeros") {
    CHECK(format_score(0.8) == "0.8");
    CHECK(format_score(1.0) == "1");
    CHECK(format_score(0.25) == "0.25");
    CHECK(format_score(0.0) == "0");
}

TEST_CASE("atomic write creates directories and replaces contents") {
    const auto dir = std::filesystem::temp_directory_path() / "siri-util-test";
    std::filesystem::remove_all(dir);
    const auto path = (dir / "nested" / "f.txt").string();
    write_file_atomic(path, "one");
    CHECK(read_file(path) == "one");
    write_file_atomic(path, "two");
    CHECK(read_file(path) == "two");
    CHECK_THROWS_AS(read_file((dir / "missing").string()), StorageError);
    std::filesystem::remove_all(dir);
}
