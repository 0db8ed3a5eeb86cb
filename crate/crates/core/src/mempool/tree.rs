//! Red-black tree threaded through the mempool slab, ordered by
//! `(fee, tx_id)`. Slot `NIL` is the black sentinel; its parent link is
//! scratch space during deletion.

use super::{Mempool, NIL, RED_BIT};

impl Mempool {
    #[inline]
    fn parent(&self, i: u32) -> u32 {
        self.slots[i as usize].parent_color & !RED_BIT
    }

    #[inline]
    fn set_parent(&mut self, i: u32, p: u32) {
        let slot = &mut self.slots[i as usize];
        slot.parent_color = (slot.parent_color & RED_BIT) | p;
    }

    #[inline]
    fn is_red(&self, i: u32) -> bool {
        self.slots[i as usize].parent_color & RED_BIT != 0
    }

    #[inline]
    fn set_red(&mut self, i: u32, red: bool) {
        let slot = &mut self.slots[i as usize];
        if red {
            slot.parent_color |= RED_BIT;
        } else {
            slot.parent_color &= !RED_BIT;
        }
    }

    #[inline]
    fn left(&self, i: u32) -> u32 {
        self.slots[i as usize].left
    }

    #[inline]
    fn right(&self, i: u32) -> u32 {
        self.slots[i as usize].right
    }

    pub(super) fn tree_minimum(&self, mut i: u32) -> u32 {
        while self.left(i) != NIL {
            i = self.left(i);
        }
        i
    }

    pub(super) fn tree_maximum(&self, mut i: u32) -> u32 {
        while self.right(i) != NIL {
            i = self.right(i);
        }
        i
    }

    pub(super) fn tree_successor(&self, mut i: u32) -> u32 {
        if self.right(i) != NIL {
            return self.tree_minimum(self.right(i));
        }
        let mut p = self.parent(i);
        while p != NIL && i == self.right(p) {
            i = p;
            p = self.parent(p);
        }
        p
    }

    pub(super) fn tree_predecessor(&self, mut i: u32) -> u32 {
        if self.left(i) != NIL {
            return self.tree_maximum(self.left(i));
        }
        let mut p = self.parent(i);
        while p != NIL && i == self.left(p) {
            i = p;
            p = self.parent(p);
        }
        p
    }

    fn rotate_left(&mut self, x: u32) {
        let y = self.right(x);
        let y_left = self.left(y);
        self.slots[x as usize].right = y_left;
        if y_left != NIL {
            self.set_parent(y_left, x);
        }
        let xp = self.parent(x);
        self.set_parent(y, xp);
        if xp == NIL {
            self.root = y;
        } else if x == self.left(xp) {
            self.slots[xp as usize].left = y;
        } else {
            self.slots[xp as usize].right = y;
        }
        self.slots[y as usize].left = x;
        self.set_parent(x, y);
    }

    fn rotate_right(&mut self, x: u32) {
        let y = self.left(x);
        let y_right = self.right(y);
        self.slots[x as usize].left = y_right;
        if y_right != NIL {
            self.set_parent(y_right, x);
        }
        let xp = self.parent(x);
        self.set_parent(y, xp);
        if xp == NIL {
            self.root = y;
        } else if x == self.right(xp) {
            self.slots[xp as usize].right = y;
        } else {
            self.slots[xp as usize].left = y;
        }
        self.slots[y as usize].right = x;
        self.set_parent(x, y);
    }

    /// Links a freshly allocated slot `z` into the tree.
    pub(super) fn tree_insert(&mut self, z: u32) {
        let key = self.slots[z as usize].key();
        let mut parent = NIL;
        let mut cur = self.root;
        while cur != NIL {
            parent = cur;
            cur = if key < self.slots[cur as usize].key() {
                self.left(cur)
            } else {
                self.right(cur)
            };
        }
        self.set_parent(z, parent);
        if parent == NIL {
            self.root = z;
        } else if key < self.slots[parent as usize].key() {
            self.slots[parent as usize].left = z;
        } else {
            self.slots[parent as usize].right = z;
        }
        self.slots[z as usize].left = NIL;
        self.slots[z as usize].right = NIL;
        self.set_red(z, true);
        if self.min == NIL || key < self.slots[self.min as usize].key() {
            self.min = z;
        }
        self.insert_fixup(z);
    }

    fn insert_fixup(&mut self, mut z: u32) {
        while self.is_red(self.parent(z)) {
            let p = self.parent(z);
            let g = self.parent(p);
            if p == self.left(g) {
                let uncle = self.right(g);
                if self.is_red(uncle) {
                    self.set_red(p, false);
                    self.set_red(uncle, false);
                    self.set_red(g, true);
                    z = g;
                } else {
                    if z == self.right(p) {
                        z = p;
                        self.rotate_left(z);
                    }
                    let p = self.parent(z);
                    let g = self.parent(p);
                    self.set_red(p, false);
                    self.set_red(g, true);
                    self.rotate_right(g);
                }
            } else {
                let uncle = self.left(g);
                if self.is_red(uncle) {
                    self.set_red(p, false);
                    self.set_red(uncle, false);
                    self.set_red(g, true);
                    z = g;
                } else {
                    if z == self.left(p) {
                        z = p;
                        self.rotate_right(z);
                    }
                    let p = self.parent(z);
                    let g = self.parent(p);
                    self.set_red(p, false);
                    self.set_red(g, true);
                    self.rotate_left(g);
                }
            }
        }
        let root = self.root;
        self.set_red(root, false);
    }

    fn transplant(&mut self, u: u32, v: u32) {
        let up = self.parent(u);
        if up == NIL {
            self.root = v;
        } else if u == self.left(up) {
            self.slots[up as usize].left = v;
        } else {
            self.slots[up as usize].right = v;
        }
        // May write the sentinel's parent; delete_fixup relies on it.
        self.set_parent(v, up);
    }

    /// Unlinks slot `z` from the tree. The slot itself is not released.
    pub(super) fn tree_delete(&mut self, z: u32) {
        if z == self.min {
            self.min = self.tree_successor(z);
        }
        let mut y = z;
        let mut y_was_red = self.is_red(y);
        let x;
        if self.left(z) == NIL {
            x = self.right(z);
            self.transplant(z, x);
        } else if self.right(z) == NIL {
            x = self.left(z);
            self.transplant(z, x);
        } else {
            y = self.tree_minimum(self.right(z));
            y_was_red = self.is_red(y);
            x = self.right(y);
            if self.parent(y) == z {
                self.set_parent(x, y);
            } else {
                self.transplant(y, x);
                let zr = self.right(z);
                self.slots[y as usize].right = zr;
                self.set_parent(zr, y);
            }
            self.transplant(z, y);
            let zl = self.left(z);
            self.slots[y as usize].left = zl;
            self.set_parent(zl, y);
            let z_red = self.is_red(z);
            self.set_red(y, z_red);
        }
        if !y_was_red {
            self.delete_fixup(x);
        }
        // Leave the sentinel clean.
        self.slots[NIL as usize].parent_color = 0;
        self.slots[NIL as usize].left = NIL;
        self.slots[NIL as usize].right = NIL;
    }

    fn delete_fixup(&mut self, mut x: u32) {
        while x != self.root && !self.is_red(x) {
            let p = self.parent(x);
            if x == self.left(p) {
                let mut w = self.right(p);
                if self.is_red(w) {
                    self.set_red(w, false);
                    self.set_red(p, true);
                    self.rotate_left(p);
                    w = self.right(self.parent(x));
                }
                if !self.is_red(self.left(w)) && !self.is_red(self.right(w)) {
                    self.set_red(w, true);
                    x = self.parent(x);
                } else {
                    if !self.is_red(self.right(w)) {
                        let wl = self.left(w);
                        self.set_red(wl, false);
                        self.set_red(w, true);
                        self.rotate_right(w);
                        w = self.right(self.parent(x));
                    }
                    let p = self.parent(x);
                    let p_red = self.is_red(p);
                    self.set_red(w, p_red);
                    self.set_red(p, false);
                    let wr = self.right(w);
                    self.set_red(wr, false);
                    self.rotate_left(p);
                    x = self.root;
                }
            } else {
                let mut w = self.left(p);
                if self.is_red(w) {
                    self.set_red(w, false);
                    self.set_red(p, true);
                    self.rotate_right(p);
                    w = self.left(self.parent(x));
                }
                if !self.is_red(self.right(w)) && !self.is_red(self.left(w)) {
                    self.set_red(w, true);
                    x = self.parent(x);
                } else {
                    if !self.is_red(self.left(w)) {
                        let wr = self.right(w);
                        self.set_red(wr, false);
                        self.set_red(w, true);
                        self.rotate_left(w);
                        w = self.left(self.parent(x));
                    }
                    let p = self.parent(x);
                    let p_red = self.is_red(p);
                    self.set_red(w, p_red);
                    self.set_red(p, false);
                    let wl = self.left(w);
                    self.set_red(wl, false);
                    self.rotate_right(p);
                    x = self.root;
                }
            }
        }
        self.set_red(x, false);
    }

    /// Verifies parent links and red-black properties; returns node count.
    pub(super) fn tree_audit(&self) -> Result<usize, String> {
        if self.is_red(NIL) {
            return Err("sentinel is red".into());
        }
        if self.root == NIL {
            return Ok(0);
        }
        if self.is_red(self.root) {
            return Err("root is red".into());
        }
        if self.parent(self.root) != NIL {
            return Err("root has a parent".into());
        }
        // (node, black height so far); iterative to bound stack use.
        let mut count = 0;
        let mut leaf_black_height: Option<usize> = None;
        let mut stack = vec![(self.root, 0usize)];
        while let Some((node, above)) = stack.pop() {
            count += 1;
            if count > self.len {
                return Err("tree holds more nodes than len (cycle?)".into());
            }
            let black = above + usize::from(!self.is_red(node));
            for child in [self.left(node), self.right(node)] {
                if child == NIL {
                    match leaf_black_height {
                        None => leaf_black_height = Some(black),
                        Some(h) if h != black => return Err("unequal black heights".into()),
                        _ => {}
                    }
                    continue;
                }
                if self.parent(child) != node {
                    return Err(format!("broken parent link below slot {node}"));
                }
                if self.is_red(node) && self.is_red(child) {
                    return Err("red node with red child".into());
                }
                stack.push((child, black));
            }
        }
        Ok(count)
    }
}
