//! Strongly connected components on small dense directed graphs.

/// Strongly connected components of a directed graph given by adjacency lists.
#[derive(Debug, Clone)]
pub struct Components {
    /// Component index of each node.
    pub component_of: Vec<usize>,
    /// Members of each component, ascending.
    pub members: Vec<Vec<usize>>,
}

impl Components {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// A component is closed when no edge leaves it.
    pub fn closed(&self, adjacency: &[Vec<usize>]) -> Vec<bool> {
        let mut closed = vec![true; self.members.len()];
        for (v, succ) in adjacency.iter().enumerate() {
            let c = self.component_of[v];
            if succ.iter().any(|&w| self.component_of[w] != c) {
                closed[c] = false;
            }
        }
        closed
    }
}

/// Iterative Tarjan. Nodes without outgoing edges still form singleton components.
pub fn tarjan(adjacency: &[Vec<usize>]) -> Components {
    const UNVISITED: usize = usize::MAX;
    let n = adjacency.len();
    let mut index = vec![UNVISITED; n];
    let mut lowlink = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut component_of = vec![UNVISITED; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut next_index = 0usize;
    // (node, position in its successor list)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call.push((root, 0));
        index[root] = next_index;
        lowlink[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(top) = call.last_mut() {
            let v = top.0;
            if top.1 < adjacency[v].len() {
                let w = adjacency[v][top.1];
                top.1 += 1;
                if index[w] == UNVISITED {
                    index[w] = next_index;
                    lowlink[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                lowlink[parent] = lowlink[parent].min(lowlink[v]);
            }
            if lowlink[v] == index[v] {
                let id = members.len();
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    component_of[w] = id;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                members.push(comp);
            }
        }
    }

    Components {
        component_of,
        members,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_and_tail() {
        // 0 -> 1 -> 2 -> 0, 3 -> 0
        let adj = vec![vec![1], vec![2], vec![0], vec![0]];
        let c = tarjan(&adj);
        assert_eq!(c.len(), 2);
        assert_eq!(c.component_of[0], c.component_of[2]);
        assert_ne!(c.component_of[3], c.component_of[0]);
        let closed = c.closed(&adj);
        assert!(closed[c.component_of[0]]);
        assert!(!closed[c.component_of[3]]);
    }

    #[test]
    fn isolated_nodes_are_closed_singletons() {
        let adj = vec![vec![], vec![]];
        let c = tarjan(&adj);
        assert_eq!(c.len(), 2);
        assert!(c.closed(&adj).iter().all(|&b| b));
    }

    #[test]
    fn long_path_does_not_recurse() {
        let n = 100_000;
        let adj: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + 1) % n]).collect();
        let c = tarjan(&adj);
        assert_eq!(c.len(), 1);
    }
}
