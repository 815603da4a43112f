/* Data-structure routines for the corpus fixtures. */
typedef unsigned int u32;
typedef unsigned char u8;

struct entry { u32 key; int value; int used; };
struct table { struct entry *slots; u32 cap; u32 len; };

static u32 mix(u32 k) { k ^= k >> 16; k *= 0x85EBCA6Bu; k ^= k >> 13; k *= 0xC2B2AE35u; return k ^ (k >> 16); }

int table_put(struct table *t, u32 key, int value) {
    if (t->len * 4 >= t->cap * 3) return -1;
    u32 i = mix(key) & (t->cap - 1);
    while (t->slots[i].used && t->slots[i].key != key) i = (i + 1) & (t->cap - 1);
    if (!t->slots[i].used) t->len++;
    t->slots[i].used = 1;
    t->slots[i].key = key;
    t->slots[i].value = value;
    return 0;
}

int *table_get(struct table *t, u32 key) {
    u32 i = mix(key) & (t->cap - 1);
    while (t->slots[i].used) {
        if (t->slots[i].key == key) return &t->slots[i].value;
        i = (i + 1) & (t->cap - 1);
    }
    return 0;
}

void heap_push(int *h, int *n, int v) {
    int i = (*n)++;
    h[i] = v;
    while (i > 0) {
        int p = (i - 1) / 2;
        if (h[p] <= h[i]) break;
        int t = h[p]; h[p] = h[i]; h[i] = t;
        i = p;
    }
}

int heap_pop(int *h, int *n) {
    int top = h[0];
    h[0] = h[--*n];
    int i = 0;
    for (;;) {
        int l = 2 * i + 1, r = l + 1, m = i;
        if (l < *n && h[l] < h[m]) m = l;
        if (r < *n && h[r] < h[m]) m = r;
        if (m == i) break;
        int t = h[m]; h[m] = h[i]; h[i] = t;
        i = m;
    }
    return top;
}

struct ring { u8 *buf; u32 cap, head, tail; };

int ring_put(struct ring *r, u8 v) {
    u32 next = (r->head + 1) % r->cap;
    if (next == r->tail) return 0;
    r->buf[r->head] = v;
    r->head = next;
    return 1;
}

int ring_get(struct ring *r, u8 *v) {
    if (r->head == r->tail) return 0;
    *v = r->buf[r->tail];
    r->tail = (r->tail + 1) % r->cap;
    return 1;
}

void bitset_set(u32 *b, int i) { b[i >> 5] |= 1u << (i & 31); }
int bitset_test(const u32 *b, int i) { return (b[i >> 5] >> (i & 31)) & 1; }
int bitset_count(const u32 *b, int words) {
    int c = 0;
    for (int i = 0; i < words; i++) { u32 x = b[i]; x = x - ((x >> 1) & 0x55555555u); x = (x & 0x33333333u) + ((x >> 2) & 0x33333333u); c += (((x + (x >> 4)) & 0x0F0F0F0Fu) * 0x01010101u) >> 24; }
    return c;
}

int uf_find(int *parent, int x) {
    while (parent[x] != x) { parent[x] = parent[parent[x]]; x = parent[x]; }
    return x;
}

int uf_union(int *parent, int *rank, int a, int b) {
    a = uf_find(parent, a);
    b = uf_find(parent, b);
    if (a == b) return 0;
    if (rank[a] < rank[b]) { int t = a; a = b; b = t; }
    parent[b] = a;
    if (rank[a] == rank[b]) rank[a]++;
    return 1;
}

struct dnode { struct dnode *prev, *next; int key; };

void dlist_insert_after(struct dnode *at, struct dnode *n) {
    n->prev = at;
    n->next = at->next;
    if (at->next) at->next->prev = n;
    at->next = n;
}

void dlist_remove(struct dnode *n) {
    if (n->prev) n->prev->next = n->next;
    if (n->next) n->next->prev = n->prev;
    n->prev = n->next = 0;
}

struct lru { struct dnode head; int size, cap; };

struct dnode *lru_touch(struct lru *c, struct dnode *n) {
    struct dnode *evicted = 0;
    if (n->prev || n->next) dlist_remove(n);
    else if (++c->size > c->cap) {
        struct dnode *t = c->head.next;
        while (t && t->next) t = t->next;
        if (t) { dlist_remove(t); evicted = t; c->size--; }
    }
    dlist_insert_after(&c->head, n);
    return evicted;
}

int bfs(const int *adj, int n, int src, int *dist, int *queue) {
    for (int i = 0; i < n; i++) dist[i] = -1;
    int qh = 0, qt = 0, seen = 1;
    dist[src] = 0;
    queue[qt++] = src;
    while (qh < qt) {
        int u = queue[qh++];
        for (int v = 0; v < n; v++)
            if (adj[u * n + v] && dist[v] < 0) { dist[v] = dist[u] + 1; queue[qt++] = v; seen++; }
    }
    return seen;
}

void dijkstra(const int *w, int n, int src, int *dist, u8 *done) {
    for (int i = 0; i < n; i++) { dist[i] = 0x3FFFFFFF; done[i] = 0; }
    dist[src] = 0;
    for (int it = 0; it < n; it++) {
        int u = -1;
        for (int i = 0; i < n; i++) if (!done[i] && (u < 0 || dist[i] < dist[u])) u = i;
        if (u < 0 || dist[u] == 0x3FFFFFFF) break;
        done[u] = 1;
        for (int v = 0; v < n; v++)
            if (w[u * n + v] > 0 && dist[u] + w[u * n + v] < dist[v]) dist[v] = dist[u] + w[u * n + v];
    }
}

void merge_sort(int *a, int *tmp, int n) {
    if (n < 2) return;
    int m = n / 2;
    merge_sort(a, tmp, m);
    merge_sort(a + m, tmp, n - m);
    int i = 0, j = m, k = 0;
    while (i < m && j < n) tmp[k++] = a[i] <= a[j] ? a[i++] : a[j++];
    while (i < m) tmp[k++] = a[i++];
    while (j < n) tmp[k++] = a[j++];
    for (i = 0; i < n; i++) a[i] = tmp[i];
}

int trie_insert(int (*next)[26], int *nodes, const char *s) {
    int cur = 0;
    for (; *s; s++) {
        int c = *s - 'a';
        if (c < 0 || c >= 26) return -1;
        if (!next[cur][c]) next[cur][c] = (*nodes)++;
        cur = next[cur][c];
    }
    return cur;
}
