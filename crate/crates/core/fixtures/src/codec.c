/* Encoding and checksum routines for the corpus fixtures. */
typedef unsigned int u32;
typedef unsigned short u16;
typedef unsigned char u8;

u32 adler32(const u8 *p, int n) {
    u32 a = 1, b = 0;
    for (int i = 0; i < n; i++) { a = (a + p[i]) % 65521; b = (b + a) % 65521; }
    return (b << 16) | a;
}

int rle_encode(const u8 *in, int n, u8 *out) {
    int k = 0;
    for (int i = 0; i < n;) {
        int run = 1;
        while (i + run < n && in[i + run] == in[i] && run < 255) run++;
        out[k++] = run;
        out[k++] = in[i];
        i += run;
    }
    return k;
}

int rle_decode(const u8 *in, int n, u8 *out) {
    int k = 0;
    for (int i = 0; i + 1 < n; i += 2)
        for (int j = 0; j < in[i]; j++) out[k++] = in[i + 1];
    return k;
}

int lz_compress(const u8 *in, int n, u8 *out) {
    int k = 0, i = 0;
    while (i < n) {
        int best = 0, dist = 0;
        int start = i > 255 ? i - 255 : 0;
        for (int j = start; j < i; j++) {
            int l = 0;
            while (i + l < n && in[j + l] == in[i + l] && l < 18) l++;
            if (l > best) { best = l; dist = i - j; }
        }
        if (best >= 3) { out[k++] = 0x80 | (best - 3); out[k++] = dist; i += best; }
        else { out[k++] = in[i] & 0x7F; if (in[i] & 0x80) { out[k - 1] = 0x7F; out[k++] = in[i]; } i++; }
    }
    return k;
}

void xtea_encrypt(u32 *v, const u32 *key, int rounds) {
    u32 v0 = v[0], v1 = v[1], sum = 0, delta = 0x9E3779B9u;
    for (int i = 0; i < rounds; i++) {
        v0 += (((v1 << 4) ^ (v1 >> 5)) + v1) ^ (sum + key[sum & 3]);
        sum += delta;
        v1 += (((v0 << 4) ^ (v0 >> 5)) + v0) ^ (sum + key[(sum >> 11) & 3]);
    }
    v[0] = v0;
    v[1] = v1;
}

void xtea_decrypt(u32 *v, const u32 *key, int rounds) {
    u32 v0 = v[0], v1 = v[1], delta = 0x9E3779B9u, sum = delta * rounds;
    for (int i = 0; i < rounds; i++) {
        v1 -= (((v0 << 4) ^ (v0 >> 5)) + v0) ^ (sum + key[(sum >> 11) & 3]);
        sum -= delta;
        v0 -= (((v1 << 4) ^ (v1 >> 5)) + v1) ^ (sum + key[sum & 3]);
    }
    v[0] = v0;
    v[1] = v1;
}

int hex_encode(const u8 *in, int n, char *out) {
    static const char d[] = "0123456789abcdef";
    for (int i = 0; i < n; i++) { out[2 * i] = d[in[i] >> 4]; out[2 * i + 1] = d[in[i] & 15]; }
    out[2 * n] = 0;
    return 2 * n;
}

static int hexval(int c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

int hex_decode(const char *in, u8 *out) {
    int k = 0;
    while (in[0] && in[1]) {
        int hi = hexval(in[0]), lo = hexval(in[1]);
        if (hi < 0 || lo < 0) return -1;
        out[k++] = (hi << 4) | lo;
        in += 2;
    }
    return k;
}

u16 crc16_ccitt(const u8 *p, int n) {
    u16 crc = 0xFFFF;
    for (int i = 0; i < n; i++) {
        crc ^= (u16)p[i] << 8;
        for (int b = 0; b < 8; b++) crc = crc & 0x8000 ? (crc << 1) ^ 0x1021 : crc << 1;
    }
    return crc;
}

void substitute(u8 *p, int n, const u8 *table) { for (int i = 0; i < n; i++) p[i] = table[p[i]]; }

void vigenere(u8 *p, int n, const u8 *key, int klen) { for (int i = 0; i < n; i++) p[i] += key[i % klen]; }

void shuffle_block(u8 *p, const u8 *perm, u8 *tmp, int block) {
    for (int i = 0; i < block; i++) tmp[i] = p[perm[i]];
    for (int i = 0; i < block; i++) p[i] = tmp[i];
}

int base32_encode(const u8 *in, int n, char *out) {
    static const char a[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZ234567";
    int k = 0, bits = 0;
    u32 acc = 0;
    for (int i = 0; i < n; i++) {
        acc = (acc << 8) | in[i];
        bits += 8;
        while (bits >= 5) { out[k++] = a[(acc >> (bits - 5)) & 31]; bits -= 5; }
    }
    if (bits) out[k++] = a[(acc << (5 - bits)) & 31];
    out[k] = 0;
    return k;
}

void huff_counts(const u8 *p, int n, u32 *freq, u8 *order) {
    for (int i = 0; i < 256; i++) { freq[i] = 0; order[i] = i; }
    for (int i = 0; i < n; i++) freq[p[i]]++;
    for (int i = 1; i < 256; i++) {
        u8 v = order[i];
        int j = i - 1;
        while (j >= 0 && freq[order[j]] < freq[v]) { order[j + 1] = order[j]; j--; }
        order[j + 1] = v;
    }
}

u32 murmur_tail(const u8 *p, int n, u32 seed) {
    u32 h = seed;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        u32 k = p[i] | p[i + 1] << 8 | p[i + 2] << 16 | (u32)p[i + 3] << 24;
        k *= 0xCC9E2D51u; k = (k << 15) | (k >> 17); k *= 0x1B873593u;
        h ^= k; h = (h << 13) | (h >> 19); h = h * 5 + 0xE6546B64u;
    }
    u32 k = 0;
    switch (n & 3) {
    case 3: k ^= p[i + 2] << 16;
    case 2: k ^= p[i + 1] << 8;
    case 1: k ^= p[i]; k *= 0xCC9E2D51u; k = (k << 15) | (k >> 17); k *= 0x1B873593u; h ^= k;
    }
    h ^= n; h ^= h >> 16; h *= 0x85EBCA6Bu; h ^= h >> 13; h *= 0xC2B2AE35u;
    return h ^ (h >> 16);
}
